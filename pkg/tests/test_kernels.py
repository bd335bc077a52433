"""The numba and numpy versions of every kernel must agree exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest

from msdiar import kernels
from msdiar._accel import NUMBA_AVAILABLE

needs_numba = pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")


@needs_numba
def test_overlap_durations(rng):
    for _ in range(20):
        n_turns = int(rng.integers(1, 40))
        dur = rng.integers(1, 3000, size=n_turns)
        ts = np.sort(rng.integers(0, 50_000, size=n_turns)).astype(np.int64)
        te = ts + dur
        spk = rng.integers(0, 3, size=n_turns).astype(np.int64)
        ss = rng.integers(0, 50_000, size=80).astype(np.int64)
        se = ss + rng.integers(1, 2000, size=80)
        a = kernels.overlap_durations_loop(ss, se, ts, te, spk, 3)
        b = kernels.overlap_durations_numpy(ss, se, ts, te, spk, 3)
        assert np.array_equal(a, b)


@needs_numba
def test_nearest_center_with_ties_and_empty_regions(rng):
    for _ in range(50):
        ref = np.sort(rng.integers(0, 200, size=int(rng.integers(1, 30)))).astype(np.int64)
        ref_region = np.sort(rng.integers(0, 5, size=len(ref))).astype(np.int64)
        q = np.sort(rng.integers(0, 200, size=40)).astype(np.int64)
        q_region = np.sort(rng.integers(0, 6, size=40)).astype(np.int64)
        a = kernels.nearest_center_loop(q, q_region, ref, ref_region)
        b = kernels.nearest_center_numpy(q, q_region, ref, ref_region)
        assert np.array_equal(a, b)


@needs_numba
def test_topp_binarize_with_ties(rng):
    for _ in range(30):
        n = int(rng.integers(2, 25))
        A = rng.integers(0, 4, size=(n, n)) / 3.0
        A = (A + A.T) / 2
        for p in (1, 2, n // 2 + 1, n, n + 3):
            assert np.array_equal(kernels.topp_binarize_loop(A, p), kernels.topp_binarize_numpy(A, p))


@needs_numba
def test_pair_softmax_sum(rng):
    M = rng.normal(size=(30, 12))
    W = rng.normal(size=(3, 12))
    b = rng.normal(size=3)
    I = rng.integers(0, 30, size=9000).astype(np.int64)
    J = rng.integers(0, 30, size=9000).astype(np.int64)
    a = kernels.pair_softmax_sum_loop(M, W, b, I, J)
    c = kernels.pair_softmax_sum_numpy(M, W, b, I, J)
    assert np.allclose(a, c, rtol=1e-12, atol=1e-9)


def test_topp_keeps_self_and_lower_column_ties():
    A = np.array([[0.2, 0.9, 0.9], [0.9, 1.0, 0.5], [0.9, 0.5, 1.0]])
    B = kernels.topp_binarize_numpy(A, 2)
    assert B[0].tolist() == [1.0, 1.0, 0.0]
    assert np.all(B.sum(axis=1) == 2)


def test_env_flag_selects_numpy():
    code = "from msdiar import backend; print(backend())"
    env = {**os.environ, "MSDIAR_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
