import os
import subprocess
import sys

import numpy as np
import pytest

from mcpsim import WayPoint, great_circle_distance
from mcpsim import _kernels as kernels


def _random_cloud(rng, n, lat0=51.5, lon0=-0.18, spread=0.01):
    lats = lat0 + (rng.random(n) - 0.5) * spread
    lons = lon0 + (rng.random(n) - 0.5) * spread
    return lats, lons


def test_distances_match_scalar_reference():
    rng = np.random.default_rng(5)
    lats, lons = _random_cloud(rng, 200)
    got = kernels.distances_from(lats, lons, 51.5, -0.18)
    for i in range(200):
        want = great_circle_distance(WayPoint(51.5, -0.18), WayPoint(lats[i], lons[i]))
        assert got[i] == pytest.approx(want, abs=1e-9)


def test_numpy_and_selected_backend_agree():
    rng = np.random.default_rng(17)
    lats, lons = _random_cloud(rng, 300)
    active = rng.random(300) < 0.8
    senders = np.array([0, 5, 120], dtype=np.int64)
    sel = kernels.range_mask(lats, lons, senders, active, 250.0)
    ref = kernels.range_mask_numpy(lats, lons, senders, active, 250.0)
    dist_sel = kernels.distances_from(lats, lons, lats[0], lons[0])
    dist_ref = kernels.distances_from_numpy(lats, lons, lats[0], lons[0])
    np.testing.assert_allclose(dist_sel, dist_ref, atol=1e-6)
    # masks may only disagree within float noise of the range boundary
    for s in range(len(senders)):
        d = kernels.distances_from_numpy(lats, lons, lats[senders[s]], lons[senders[s]])
        disputed = sel[s] != ref[s]
        assert np.all(np.abs(d[disputed] - 250.0) < 1e-6)


def test_range_mask_excludes_self_and_inactive():
    lats = np.array([51.5, 51.5, 51.5])
    lons = np.array([-0.18, -0.18, -0.18])
    active = np.array([True, False, True])
    mask = kernels.range_mask(lats, lons, np.array([0], dtype=np.int64), active, 10.0)
    assert not mask[0, 0]  # never hears itself
    assert not mask[0, 1]  # inactive peers do not receive
    assert mask[0, 2]


def test_range_mask_distance_cutoff():
    # ~111 m per 0.001 degree of latitude
    lats = np.array([51.5, 51.50008, 51.5002])
    lons = np.array([-0.18, -0.18, -0.18])
    active = np.ones(3, dtype=bool)
    mask = kernels.range_mask(lats, lons, np.array([0], dtype=np.int64), active, 10.0)
    assert mask[0, 1]  # ~8.9 m away
    assert not mask[0, 2]  # ~22 m away


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, MCPSIM_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", "import mcpsim._kernels as k; print(k.BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_bogus_backend_is_rejected():
    env = dict(os.environ, MCPSIM_BACKEND="fortran")
    out = subprocess.run(
        [sys.executable, "-c", "import mcpsim._kernels"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.returncode != 0
    assert "MCPSIM_BACKEND" in out.stderr
