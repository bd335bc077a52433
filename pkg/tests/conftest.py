import itertools

import numpy as np
import pytest

from msdiar.session_io import RttmTurn


def random_turns(rng, n_turns=30, n_spk=3, rec="rec", overlap=True, span_ms=60_000):
    """Random reference turns in ms; overlaps allowed unless ``overlap`` is False."""
    turns = []
    if overlap:
        for _ in range(n_turns):
            on = int(rng.integers(0, span_ms))
            dur = int(rng.integers(50, 4000))
            turns.append(RttmTurn(rec, on, dur, f"s{int(rng.integers(n_spk))}"))
    else:
        t = int(rng.integers(0, 500))
        for _ in range(n_turns):
            dur = int(rng.integers(100, 4000))
            turns.append(RttmTurn(rec, t, dur, f"s{int(rng.integers(n_spk))}"))
            t += dur + int(rng.integers(0, 3)) * int(rng.integers(0, 1500))
    return sorted(turns, key=lambda x: (x.onset_ms, x.speaker_id))


def grid_activity(turns, speakers, total_ms):
    """(total_ms, K) boolean 1 ms grid of speaker activity."""
    idx = {s: k for k, s in enumerate(speakers)}
    G = np.zeros((total_ms, len(speakers)), dtype=bool)
    for t in turns:
        G[t.onset_ms : t.end_ms, idx[t.speaker_id]] = True
    return G


def frame_der(ref, hyp_spans, collar_ms=250, score_overlap=False):
    """1 ms frame-level DER with brute-force optimal mapping. Returns (miss, fa, conf, total) in ms."""
    speakers = sorted({t.speaker_id for t in ref})
    clusters = sorted({c for _, _, c in hyp_spans}, key=str)
    end = max([t.end_ms for t in ref] + [e for _, e, _ in hyp_spans]) + collar_ms + 1
    R = grid_activity(ref, speakers, end)
    H = np.zeros((end, max(1, len(clusters))), dtype=bool)
    for s, e, c in hyp_spans:
        H[s:e, clusters.index(c)] = True
    scored = np.ones(end, dtype=bool)
    for t in ref:
        for b in (t.onset_ms, t.end_ms):
            scored[max(0, b - collar_ms) : b + collar_ms] = False
    if not score_overlap:
        scored &= R.sum(1) < 2
    R, H = R[scored], H[scored]
    best = None
    n = max(len(speakers), len(clusters))
    for perm in itertools.permutations(range(n), len(speakers)):
        correct = np.zeros(len(R), dtype=int)
        for r, c in enumerate(perm):
            if c < len(clusters):
                correct += R[:, r] & H[:, c]
        if best is None or correct.sum() > best.sum():
            best = correct
    nr, nh = R.sum(1), H.sum(1) if clusters else np.zeros(len(R), int)
    miss = np.maximum(nr - nh, 0).sum()
    fa = np.maximum(nh - nr, 0).sum()
    conf = (np.minimum(nr, nh) - best).sum()
    return int(miss), int(fa), int(conf), int(nr.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grads(params, batch, step=1e-5):
    """Central finite differences of the NASF loss for every parameter entry."""
    from msdiar.nasf import forward, loss

    out = {}
    for name in params.ARRAYS:
        arr = getattr(params, name)
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + step
            lp = loss(forward(params, batch)[1], batch.target)
            flat[k] = old - step
            lm = loss(forward(params, batch)[1], batch.target)
            flat[k] = old
            gflat[k] = (lp - lm) / (2 * step)
        out[name] = g
    return out


def max_rel_error(a, b, floor=1e-7):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_batch(rng, S=3, N=6, d=4):
    from msdiar.nasf import PairBatch

    return PairBatch(
        rng.normal(size=(S, N, d)),
        rng.normal(size=(S, N, d)),
        rng.random((N, S)),
        rng.random(N),
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
