"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and immediately, when run with ``-s``).

    pytest tests/test_acceptance.py -v
"""

import itertools
import time

import numpy as np
import pytest

from msdiar import nasf
from msdiar.affinity import build_affinity_tensor, fuse
from msdiar.cli import main, run_ablation
from msdiar.labels import label_vector, pair_labels, segment_labels, speaker_list
from msdiar.nmesc import canonical_labels, nme_search, nmesc
from msdiar.pipeline import PipelineConfig, Session, session_pairs
from msdiar.scorer import der
from msdiar.segmenter import DEFAULT_SCALES, Segment, build_multiscale, segment_region
from msdiar.session_io import RttmTurn, SpeechRegionList
from msdiar.synth import SynthConfig, gen_corpus, gen_session

from conftest import ACCEPTANCE_LINES, frame_der, grid_activity, max_rel_error, numeric_grads, random_turns


def record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    ACCEPTANCE_LINES.append((n, line))
    print(line)
    return ok


# ---------------------------------------------------------------------------


def test_criterion_01_segmentation_golden():
    t0 = time.perf_counter()
    counts = [len(segment_region((0, 3000), cfg)) for cfg in DEFAULT_SCALES]
    base = [(s.start_ms, s.end_ms) for s in segment_region((0, 3000), DEFAULT_SCALES[2])]
    coarse = [(s.start_ms, s.end_ms) for s in segment_region((0, 3000), DEFAULT_SCALES[0])]
    elapsed = time.perf_counter() - t0
    ok = (
        counts == [4, 6, 12]
        and base == [(k * 250, k * 250 + 500) for k in range(11)] + [(2750, 3000)]
        and coarse == [(0, 1500), (750, 2250), (1500, 3000), (2250, 3000)]
        and elapsed < 1.0
    )
    assert record(1, ok, f"segment counts 1.5/1.0/0.5 s = {counts}, {elapsed * 1e3:.1f} ms")


def test_criterion_02_mapping_matches_brute_force():
    rng = np.random.default_rng(2)
    mismatches = sessions = 0
    while sessions < 100:
        n_reg = int(rng.integers(1, 8))
        bounds = np.sort(rng.choice(120_000, size=2 * n_reg, replace=False))
        regions = SpeechRegionList(tuple((int(a), int(b)) for a, b in bounds.reshape(-1, 2)))
        try:
            ms = build_multiscale(regions)
        except ValueError:
            continue
        sessions += 1
        base = ms.segments(ms.n_scales - 1)
        for s in range(ms.n_scales - 1):
            segs = ms.segments(s)
            for i, b in enumerate(base):
                region = next(r for r, (a, e) in enumerate(regions) if a <= b.start_ms < e)
                cand = [j for j, x in enumerate(segs) if regions.regions[region][0] <= x.start_ms < regions.regions[region][1]]
                cand = cand or list(range(len(segs)))
                best = min(cand, key=lambda j: (abs(segs[j].start_ms + segs[j].end_ms - b.start_ms - b.end_ms), j))
                mismatches += int(ms.mapping[i, s] != best)
    assert record(2, mismatches == 0, f"{sessions} random sessions, {mismatches} mapping mismatches")


def test_criterion_03_label_fidelity():
    rng = np.random.default_rng(3)
    worst = 0
    for _ in range(50):
        turns = random_turns(rng, n_turns=40, n_spk=4, span_ms=60_000)
        spk = speaker_list(turns)
        end = max(t.end_ms for t in turns)
        G = grid_activity(turns, spk, end + 2000)
        for _ in range(40):
            s = int(rng.integers(0, end))
            seg = Segment(2, s, s + int(rng.integers(170, 1500)))
            v = label_vector(seg, turns, spk)
            oracle = G[seg.start_ms : seg.end_ms].sum(axis=0)
            worst = max(worst, int(np.max(np.abs(np.round(v * 1000) - oracle))))
    turns = [RttmTurn("r", 0, 500, "s2"), RttmTurn("r", 500, 500, "s1"), RttmTurn("r", 750, 250, "s2")]
    vA = label_vector(Segment(2, 0, 500), turns, ["s1", "s2"])
    vB = label_vector(Segment(2, 500, 1000), turns, ["s1", "s2"])
    d = pair_labels([vA, vB], [(0, 1)])[0].d
    ok = worst <= 1 and vA.tolist() == [0, 0.5] and vB.tolist() == [0.5, 0.25] and abs(d - 0.4472) <= 1e-4
    assert record(3, ok, f"max grid deviation {worst} ms; vA={vA.tolist()} vB={vB.tolist()} d={d:.6f}")


def test_criterion_04_gradient_check():
    rng = np.random.default_rng(4)
    worst = 0.0
    configs = 0
    for k in range(12):
        S = int(rng.integers(2, 4))
        d = int(rng.integers(2, 6))
        hidden = int(rng.integers(3, 7))
        out = int(rng.integers(2, 6))
        N = int(rng.integers(2, 9))
        p = nasf.init_params(S, d, hidden, out, seed=k, use_bias=bool(k % 3))
        p.H[...] = rng.normal(scale=0.5, size=p.H.shape)
        if p.use_bias:
            p.c[...] = rng.normal(scale=0.5, size=S)
        p.b1[...] = rng.normal(scale=0.1, size=p.b1.shape)
        p.b2[...] = rng.normal(scale=0.1, size=p.b2.shape)
        batch = nasf.PairBatch(rng.normal(size=(S, N, d)), rng.normal(size=(S, N, d)), rng.random((N, S)), rng.random(N))
        _, g = nasf.backward(p, batch)
        num = numeric_grads(p, batch, step=1e-5)
        worst = max(worst, max(max_rel_error(g[n], num[n]) for n in p.ARRAYS))
        configs += 1
    assert record(4, worst < 1e-4, f"{configs} configurations, max relative error {worst:.2e}")


def planted_pairs(sess_id, sess, n_pairs, seed):
    """Session pairs whose scale-0 normalized cosine is replaced by the label cosine."""
    session = Session(sess_id, sess.turns, sess.msset, sess.embeddings)
    sp = session_pairs(session, n_pairs, seed)
    V = segment_labels(sess.msset.base, sess.turns)
    Vn = V / np.linalg.norm(V, axis=1, keepdims=True)
    C = np.array(sp.C)
    C[0] = np.clip(Vn @ Vn.T, 0.0, 1.0)
    return nasf.SessionPairs(sp.emb, C, sp.I, sp.J, sp.d, sess_id)


def test_criterion_05_planted_optimum():
    t0 = time.perf_counter()
    corpus = gen_corpus(SynthConfig(session_len=60, noise=0.3, seed=55), 20, prefix="plant", speakers=[2, 3, 4])
    sessions = [planted_pairs(sid, s, 4000, i) for i, (sid, s) in enumerate(corpus)]
    train_set, val_set = sessions[:16], sessions[16:]
    result = nasf.train(train_set, nasf.TrainConfig(epochs=10, seed=5), val_sessions=val_set)
    ws = [nasf.infer_weights(result.params, v.emb, "nasf-s", seed=0)[0] for v in val_set]
    w0 = float(np.mean([w[0] for w in ws]))
    elapsed = time.perf_counter() - t0
    ok = w0 >= 0.8 and result.best_val_loss <= 0.5 * result.equal_weight_val_loss and elapsed < 300
    assert record(
        5, ok,
        f"w0={w0:.3f}, val MSE {result.best_val_loss:.5f} vs equal {result.equal_weight_val_loss:.5f} "
        f"(ratio {result.best_val_loss / result.equal_weight_val_loss:.3f}), {elapsed:.0f} s",
    )


def block_affinity(sizes, rng):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    A = (labels[:, None] == labels[None, :]).astype(float)
    perm = rng.permutation(len(labels))
    return A[np.ix_(perm, perm)], labels[perm]


def test_criterion_06_speaker_counting():
    correct = {}
    for k in (2, 3, 4):
        hits = 0
        for trial in range(50):
            s = gen_session(SynthConfig(speakers=k, noise=0.1, dim=16, session_len=60, seed=6000 + 100 * k + trial))
            T = build_affinity_tensor(s.msset, s.embeddings)
            _, k_hat, _ = nme_search(fuse(T, np.full(3, 1 / 3)))
            hits += int(k_hat == k)
        correct[k] = hits
    rate = sum(correct.values()) / 150
    rng = np.random.default_rng(6)
    perfect = 0
    for k in (2, 3, 4):
        for _ in range(50):
            # at least 10 base segments (2.5 s of speech) per speaker
            A, labels = block_affinity(rng.integers(10, 61, size=k), rng)
            res = nmesc(A)
            perfect += int(res.k == k and np.array_equal(canonical_labels(res.labels), canonical_labels(labels)))
    # reported only: sessions of a few segments per speaker with exactly tied affinities
    tiny = 0
    for k in (2, 3, 4):
        for _ in range(50):
            A, labels = block_affinity(rng.integers(4, 10, size=k), rng)
            tiny += int(nmesc(A).k == k)
    ok = all(v / 50 >= 0.95 for v in correct.values()) and perfect == 150
    assert record(6, ok, f"noisy correct k per k=2/3/4: {[correct[k] for k in (2, 3, 4)]}/50 "
                         f"(overall {100 * rate:.1f} %); block-diagonal exact {perfect}/150; "
                         f"blocks of 4-9 segments (not asserted) {tiny}/150")


def test_criterion_07_der_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    ref_ref = 0.0
    perm_diff = 0.0
    for _ in range(100):
        ref = random_turns(rng, n_turns=15, n_spk=3, span_ms=30_000)
        hyp = []
        for t in random_turns(rng, n_turns=15, n_spk=3, span_ms=30_000):
            s = max(0, t.onset_ms + int(rng.integers(-400, 400)))
            e = t.end_ms + int(rng.integers(-400, 400))
            if e > s:
                hyp.append((s, e, int(rng.integers(4))))
        rep = der(ref, hyp)
        miss, fa, conf, total = frame_der(ref, hyp, 250, False)
        worst = max(worst, abs(rep.der - (miss + fa + conf) / total))
        ref_ref = max(ref_ref, der(ref, ref).der)
        relabel = {c: p for c, p in zip(range(4), rng.permutation(4) + 10)}
        perm_diff = max(perm_diff, abs(der(ref, [(s, e, relabel[c]) for s, e, c in hyp]).der - rep.der))
    ok = worst <= 0.001 and ref_ref == 0.0 and perm_diff == 0.0
    assert record(7, ok, f"max |DER - frame DER| = {100 * worst:.4f} %, ref-vs-ref {ref_ref}, permutation diff {perm_diff}")


# ---------------------------------------------------------------------------
# corpus-level criteria 8 and 9 share one ablation run

ABLATION_CORPUS = dict(session_len=60.0, mean_turn=2.17, noise=0.3, dim=16, silence_fraction=0.1)


def _sessions(seed, n, prefix):
    corpus = gen_corpus(SynthConfig(seed=seed, **ABLATION_CORPUS), n, prefix=prefix, speakers=[2, 3, 4])
    return [Session(sid, s.turns, s.msset, s.embeddings) for sid, s in corpus]


@pytest.fixture(scope="module")
def ablation():
    t0 = time.perf_counter()
    cfg = PipelineConfig(seed=0)
    train_sessions = _sessions(808, 40, "train")
    pairs = [session_pairs(s, cfg.train_pairs_per_session, i) for i, s in enumerate(train_sessions)]
    result = nasf.train(pairs, nasf.TrainConfig(epochs=cfg.epochs, seed=cfg.seed, val_fraction=cfg.val_fraction))
    eval_sessions = _sessions(2024, 50, "eval")
    results = run_ablation(cfg, eval_sessions, result.params)
    return results, result, time.perf_counter() - t0


def test_criterion_08_ablation_ordering(ablation):
    results, train_result, elapsed = ablation
    d = {k: 100 * v[0].der for k, v in results.items()}
    single = min(d["0.5"], d["1.0"], d["1.5"])
    margin_eq = d["equal"] - d["nasf-s"]
    margin_single = single - d["nasf-s"]
    mean_w = np.mean([w[0] for w in results["nasf-s"][2]], axis=0)
    ok = margin_eq >= 0.5 and margin_single >= 0.5
    table = " ".join(f"{k}={v:.2f}" for k, v in d.items())
    assert record(
        8, ok,
        f"DER % {table}; NASF-S margin vs equal {margin_eq:+.2f}, vs best single {margin_single:+.2f} "
        f"(need >= 0.5 each); mean NASF-S w={np.round(mean_w, 3).tolist()}; {elapsed:.0f} s",
    )


def test_criterion_09_nasf_s_vs_d_reported(ablation):
    results = ablation[0]
    s, dd = 100 * results["nasf-s"][0].der, 100 * results["nasf-d"][0].der
    order = "NASF-S < NASF-D" if s < dd else "NASF-S >= NASF-D"
    record(9, True, f"reported only: {order} ({s:.2f} vs {dd:.2f} % DER)")


def test_criterion_10_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        corpus = root / "corpus"
        assert main(["synth", "--out-dir", str(corpus), "--n-sessions", "3", "--session-len", "40", "--seed", "10"]) == 0
        manifest = str(corpus / "manifest.txt")
        model = str(root / "m.npz")
        assert main(["train", "--manifest", manifest, "--model", model, "--epochs", "2",
                     "--train-pairs-per-session", "2000", "--seed", "10"]) == 0
        files = {}
        for mode in ("equal", "nasf-s", "nasf-d"):
            out = root / mode
            assert main(["diarize", "--manifest", manifest, "--model", model, "--mode", mode,
                         "--out-dir", str(out), "--seed", "10"]) == 0
            files.update({f"{mode}/{p.name}": p.read_bytes() for p in sorted(out.glob("*.rttm"))})
        outputs.append(files)
    same = outputs[0].keys() == outputs[1].keys() and all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    assert record(10, same and len(outputs[0]) == 9, f"{len(outputs[0])} RTTM files byte-identical across runs: {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
