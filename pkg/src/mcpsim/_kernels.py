"""Hot numeric kernels: batch great-circle range queries over peer arrays.

Two interchangeable implementations are provided: a numba ``@njit`` fast
path and a pure-numpy fallback. Selection is by the ``MCPSIM_BACKEND``
environment variable ("numba" or "numpy"); the default is numba when it is
importable. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .geo import EARTH_RADIUS_M

_DEG2RAD = math.pi / 180.0


def distances_from_numpy(lats: np.ndarray, lons: np.ndarray, qlat: float, qlon: float) -> np.ndarray:
    """Great-circle distance in meters from (qlat, qlon) to every peer."""
    lat1 = qlat * _DEG2RAD
    lat2 = lats * _DEG2RAD
    dlon = np.abs(lons - qlon) * _DEG2RAD
    c = math.sin(lat1) * np.sin(lat2) + math.cos(lat1) * np.cos(lat2) * np.cos(dlon)
    return EARTH_RADIUS_M * np.arccos(np.clip(c, -1.0, 1.0))


def range_mask_numpy(
    lats: np.ndarray,
    lons: np.ndarray,
    sender_idx: np.ndarray,
    active: np.ndarray,
    range_m: float,
) -> np.ndarray:
    """(senders, peers) mask: active peer within range of sender, self excluded."""
    lat2 = lats * _DEG2RAD
    sin2 = np.sin(lat2)
    cos2 = np.cos(lat2)
    lat1 = lats[sender_idx] * _DEG2RAD
    dlon = np.abs(lons[None, :] - lons[sender_idx, None]) * _DEG2RAD
    c = np.sin(lat1)[:, None] * sin2[None, :] + np.cos(lat1)[:, None] * cos2[None, :] * np.cos(dlon)
    dist = EARTH_RADIUS_M * np.arccos(np.clip(c, -1.0, 1.0))
    mask = (dist <= range_m) & active[None, :]
    mask[np.arange(sender_idx.shape[0]), sender_idx] = False
    return mask


_requested = os.environ.get("MCPSIM_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"MCPSIM_BACKEND must be 'numba' or 'numpy', not {_requested!r}")

_numba_err: Exception | None = None
if _requested != "numpy":
    try:
        from numba import njit
    except ImportError as exc:  # pragma: no cover - depends on environment
        _numba_err = exc
else:
    _numba_err = ImportError("numpy backend forced by MCPSIM_BACKEND")

if _numba_err is None:

    @njit(cache=True)
    def distances_from_numba(lats, lons, qlat, qlon):  # pragma: no cover - jitted
        n = lats.shape[0]
        out = np.empty(n, np.float64)
        lat1 = qlat * _DEG2RAD
        s1 = math.sin(lat1)
        c1 = math.cos(lat1)
        for j in range(n):
            lat2 = lats[j] * _DEG2RAD
            dlon = abs(lons[j] - qlon) * _DEG2RAD
            c = s1 * math.sin(lat2) + c1 * math.cos(lat2) * math.cos(dlon)
            if c > 1.0:
                c = 1.0
            elif c < -1.0:
                c = -1.0
            out[j] = EARTH_RADIUS_M * math.acos(c)
        return out

    @njit(cache=True)
    def range_mask_numba(lats, lons, sender_idx, active, range_m):  # pragma: no cover - jitted
        n_s = sender_idx.shape[0]
        n = lats.shape[0]
        out = np.zeros((n_s, n), np.bool_)
        for si in range(n_s):
            i = sender_idx[si]
            lat1 = lats[i] * _DEG2RAD
            s1 = math.sin(lat1)
            c1 = math.cos(lat1)
            for j in range(n):
                if j == i or not active[j]:
                    continue
                lat2 = lats[j] * _DEG2RAD
                dlon = abs(lons[j] - lons[i]) * _DEG2RAD
                c = s1 * math.sin(lat2) + c1 * math.cos(lat2) * math.cos(dlon)
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                if EARTH_RADIUS_M * math.acos(c) <= range_m:
                    out[si, j] = True
        return out

    BACKEND = "numba"
    distances_from = distances_from_numba
    range_mask = range_mask_numba
else:
    if _requested == "numba":
        raise RuntimeError("MCPSIM_BACKEND=numba but numba is not importable") from _numba_err
    BACKEND = "numpy"
    distances_from = distances_from_numpy
    range_mask = range_mask_numpy
