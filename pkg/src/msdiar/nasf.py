"""Neural affinity score fusion: a Siamese MLP that predicts per-session scale weights.

Each scale has its own two-layer ReLU tower. Tower outputs for one side of a
pair are concatenated, the elementwise absolute difference between the two
sides goes through a linear head, and a softmax turns the head output into a
weight per scale. The weight vector is the mean softmax over the N pairs of a
batch, and the fused score of pair n is the weighted sum of its per-scale
normalized cosines. Training minimizes the mean squared error against the
ground-truth label-vector cosine.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .affinity import BLOCK_PAIRS, block_split
from .labels import sample_pair_arrays

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_INFER_PAIRS = 500_000
MODES = ("equal", "nasf-s", "nasf-d")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class NasfParams:
    """Stacked per-scale tower weights plus the shared head.

    Shapes: ``W1 (S, hidden, d)``, ``b1 (S, hidden)``, ``W2 (S, h, hidden)``,
    ``b2 (S, h)``, ``H (S, S*h)``, ``c (S,)``.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    H: np.ndarray
    c: np.ndarray
    use_bias: bool = field(default=True, compare=False)

    ARRAYS = ("W1", "b1", "W2", "b2", "H", "c")

    @property
    def n_scales(self) -> int:
        return self.W1.shape[0]

    @property
    def dim(self) -> int:
        return self.W1.shape[2]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.ARRAYS}

    def copy(self) -> "NasfParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


def init_params(
    n_scales: int, dim: int, hidden: int = 128, out_dim: int = 128, seed=0, use_bias: bool = True
) -> NasfParams:
    rng = np.random.default_rng(seed)
    S = n_scales
    W1 = rng.normal(0.0, np.sqrt(2.0 / dim), size=(S, hidden, dim))
    W2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(S, out_dim, hidden))
    H = rng.normal(0.0, 0.01, size=(S, S * out_dim))
    return NasfParams(
        W1=W1,
        b1=np.zeros((S, hidden)),
        W2=W2,
        b2=np.zeros((S, out_dim)),
        H=H,
        c=np.zeros(S),
        use_bias=use_bias,
    )


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass
class PairBatch:
    """``emb_a``/``emb_b`` are (S, N, d); ``cos`` is (N, S) normalized cosines; ``target`` is (N,)."""

    emb_a: np.ndarray
    emb_b: np.ndarray
    cos: np.ndarray
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.emb_a.shape != self.emb_b.shape or self.emb_a.ndim != 3:
            raise ValueError(f"embedding shapes differ: {self.emb_a.shape} vs {self.emb_b.shape}")
        S, N, _ = self.emb_a.shape
        if self.cos.shape != (N, S):
            raise ValueError(f"cosine array must be ({N}, {S}), got {self.cos.shape}")
        if self.target is not None and self.target.shape != (N,):
            raise ValueError(f"target must have length {N}")

    def __len__(self):
        return self.emb_a.shape[1]


@dataclass
class SessionPairs:
    """Training material for one session.

    ``emb`` is (S, L, d): for every base segment, the embedding of its mapped
    segment at each scale. ``C`` is the (S, L, L) normalized affinity tensor
    and ``I, J, d`` the labelled base-segment pairs.
    """

    emb: np.ndarray
    C: np.ndarray
    I: np.ndarray
    J: np.ndarray
    d: np.ndarray
    session_id: str = ""

    def batch(self, idx: np.ndarray) -> PairBatch:
        I = self.I[idx]
        J = self.J[idx]
        return PairBatch(
            self.emb[:, I, :],
            self.emb[:, J, :],
            self.C[:, I, J].T.copy(),
            self.d[idx],
        )

    def __len__(self):
        return len(self.I)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def tower_outputs(params: NasfParams, emb: np.ndarray) -> np.ndarray:
    """Merged (concatenated) tower output for a (S, N, d) embedding stack -> (N, S*h)."""
    if emb.ndim != 3 or emb.shape[0] != params.n_scales or emb.shape[2] != params.dim:
        raise ValueError(
            f"embedding stack {emb.shape} incompatible with model (S={params.n_scales}, d={params.dim})"
        )
    outs = []
    for s in range(params.n_scales):
        h1 = _relu(emb[s] @ params.W1[s].T + params.b1[s])
        outs.append(_relu(h1 @ params.W2[s].T + params.b2[s]))
    return np.concatenate(outs, axis=1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _head_bias(params: NasfParams) -> np.ndarray:
    return params.c if params.use_bias else np.zeros_like(params.c)


def forward(params: NasfParams, batch: PairBatch, cache: Optional[dict] = None):
    """Return ``(w, y)``: the batch-mean weight vector and fused scores per pair."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    S = params.n_scales
    if batch.emb_a.shape[0] != S or batch.emb_a.shape[2] != params.dim:
        raise ValueError(f"batch shape {batch.emb_a.shape} incompatible with model (S={S}, d={params.dim})")
    h = params.out_dim
    acts = {}
    merged = []
    for side, X in (("a", batch.emb_a), ("b", batch.emb_b)):
        parts = []
        for s in range(S):
            a1 = X[s] @ params.W1[s].T + params.b1[s]
            h1 = _relu(a1)
            a2 = h1 @ params.W2[s].T + params.b2[s]
            parts.append(_relu(a2))
            acts[side, s] = (X[s], a1, h1, a2)
        merged.append(np.concatenate(parts, axis=1))
    diff = merged[0] - merged[1]
    u = np.abs(diff)
    z = u @ params.H.T + _head_bias(params)
    wn = softmax(z)
    w = wn.mean(axis=0)
    y = batch.cos @ w
    if cache is not None:
        cache.update(acts=acts, diff=diff, u=u, wn=wn, w=w, y=y, h=h)
    return w, y


def loss(y, d) -> float:
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if y.shape != d.shape:
        raise ValueError(f"length mismatch {y.shape} vs {d.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    r = y - d
    return float(r @ r / r.size)


def backward(params: NasfParams, batch: PairBatch) -> Tuple[float, Dict[str, np.ndarray]]:
    """MSE loss and its exact gradient w.r.t. every parameter array.

    The batch-mean weight couples all pairs: every pair's softmax contributes
    to every fused score through ``w``.
    """
    if batch.target is None:
        raise ValueError("batch has no targets")
    cache: dict = {}
    w, y = forward(params, batch, cache)
    N = len(batch)
    S = params.n_scales
    h = params.out_dim
    dy = 2.0 * (y - batch.target) / N
    g = batch.cos.T @ dy  # dL/dw
    wn = cache["wn"]
    gn = g / N  # dL/dw_n, identical for all n
    dz = wn * (gn[None, :] - (wn @ gn)[:, None])
    grads = {
        "H": dz.T @ cache["u"],
        "c": dz.sum(axis=0) if params.use_bias else np.zeros(S),
    }
    du = dz @ params.H
    dmerged = du * np.sign(cache["diff"])
    gW1 = np.zeros_like(params.W1)
    gb1 = np.zeros_like(params.b1)
    gW2 = np.zeros_like(params.W2)
    gb2 = np.zeros_like(params.b2)
    for side, sgn in (("a", 1.0), ("b", -1.0)):
        for s in range(S):
            X, a1, h1, a2 = cache["acts"][side, s]
            dm = sgn * dmerged[:, s * h : (s + 1) * h]
            da2 = dm * (a2 > 0)
            gW2[s] += da2.T @ h1
            gb2[s] += da2.sum(axis=0)
            da1 = (da2 @ params.W2[s]) * (a1 > 0)
            gW1[s] += da1.T @ X
            gb1[s] += da1.sum(axis=0)
    grads.update(W1=gW1, b1=gb1, W2=gW2, b2=gb2)
    return loss(y, batch.target), grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: NasfParams, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            getattr(params, name)[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    hidden: int = 128
    out_dim: int = 128
    use_bias: bool = True
    val_fraction: float = 0.1
    # cap on labelled pairs drawn per session per epoch; None keeps them all
    pairs_per_session: Optional[int] = 4096

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    params: NasfParams
    history: List[dict]
    best_epoch: int
    best_val_loss: float
    equal_weight_val_loss: float


def _session_batches(sess: SessionPairs, batch_size: int, cap, rng) -> Iterator[PairBatch]:
    n = len(sess)
    order = rng.permutation(n)
    if cap is not None and n > cap:
        order = order[:cap]
    for a in range(0, len(order), batch_size):
        yield sess.batch(order[a : a + batch_size])


def evaluate(params: NasfParams, sessions: Sequence[SessionPairs], batch_size: int) -> Tuple[float, float]:
    """Pair-weighted validation MSE for the model and for equal weights."""
    tot = tot_eq = 0.0
    count = 0
    for sess in sessions:
        for a in range(0, len(sess), batch_size):
            batch = sess.batch(np.arange(a, min(a + batch_size, len(sess))))
            _, y = forward(params, batch)
            n = len(batch)
            tot += loss(y, batch.target) * n
            tot_eq += loss(batch.cos.mean(axis=1), batch.target) * n
            count += n
    if count == 0:
        return float("nan"), float("nan")
    return tot / count, tot_eq / count


def split_train_val(sessions: Sequence[SessionPairs], val_fraction: float, seed) -> Tuple[list, list]:
    sessions = list(sessions)
    if len(sessions) < 2 or val_fraction <= 0:
        return sessions, []
    n_val = max(1, int(round(val_fraction * len(sessions))))
    perm = np.random.default_rng(seed).permutation(len(sessions))
    val = set(perm[:n_val].tolist())
    return [s for i, s in enumerate(sessions) if i not in val], [s for i, s in enumerate(sessions) if i in val]


def train(
    sessions: Sequence[SessionPairs],
    cfg: TrainConfig = TrainConfig(),
    val_sessions: Optional[Sequence[SessionPairs]] = None,
    init: Optional[NasfParams] = None,
) -> TrainResult:
    """Adam on per-session minibatches; returns the parameters with the best validation loss.

    When ``val_sessions`` is not given, ``cfg.val_fraction`` of the sessions is
    held out. With no validation data at all the training loss is used.
    """
    sessions = [s for s in sessions if len(s) > 0]
    if not sessions:
        raise ValueError("no training session with labelled pairs")
    if val_sessions is None:
        train_set, val_set = split_train_val(sessions, cfg.val_fraction, cfg.seed)
    else:
        train_set, val_set = sessions, [s for s in val_sessions if len(s) > 0]
    S, _, dim = train_set[0].emb.shape
    params = init.copy() if init is not None else init_params(
        S, dim, cfg.hidden, cfg.out_dim, seed=cfg.seed, use_bias=cfg.use_bias
    )
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)
    monitor = val_set if val_set else train_set

    best_val, eq_val = evaluate(params, monitor, cfg.batch_size)
    best = params.copy()
    best_epoch = 0
    history = [{"epoch": 0, "train_mse": None, "val_mse": best_val, "equal_mse": eq_val}]
    for epoch in range(1, cfg.epochs + 1):
        batches = [b for sess in train_set for b in _session_batches(sess, cfg.batch_size, cfg.pairs_per_session, rng)]
        order = rng.permutation(len(batches))
        tot = 0.0
        count = 0
        for k in order:
            batch = batches[k]
            value, grads = backward(params, batch)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"epoch {epoch}: loss became {value}")
            opt.step(params, grads)
            if not params.is_finite():
                raise TrainingDivergedError(f"epoch {epoch}: non-finite parameters after update")
            tot += value * len(batch)
            count += len(batch)
        val, eq_val = evaluate(params, monitor, cfg.batch_size)
        history.append({"epoch": epoch, "train_mse": tot / count, "val_mse": val, "equal_mse": eq_val})
        logger.info("epoch %d train_mse %.6f val_mse %.6f equal_mse %.6f", epoch, tot / count, val, eq_val)
        if val < best_val:
            best_val = val
            best = params.copy()
            best_epoch = epoch
    return TrainResult(best, history, best_epoch, best_val, eq_val)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _cross_pairs(lo_a, hi_a, lo_b, hi_b, N, rng):
    na, nb = hi_a - lo_a, hi_b - lo_b
    total = na * nb
    k = np.arange(total) if N >= total else np.sort(rng.choice(total, size=N, replace=False))
    return lo_a + k // nb, lo_b + k % nb


def mean_pair_weights(params: NasfParams, merged: np.ndarray, I, J) -> np.ndarray:
    if len(I) == 0:
        raise ValueError("no pairs to average")
    acc = kernels.pair_softmax_sum(merged, params.H, _head_bias(params), I, J)
    return acc / len(I)


def infer_weights(
    params: Optional[NasfParams],
    emb: np.ndarray,
    mode: str = "nasf-s",
    N: int = DEFAULT_INFER_PAIRS,
    seed=0,
    n_scales: Optional[int] = None,
) -> List[np.ndarray]:
    """Weight vectors for one session.

    ``emb`` is the (S, L, d) stack of mapped embeddings per base segment.
    Returns one vector for ``equal`` and ``nasf-s``, six for ``nasf-d`` in
    :data:`msdiar.affinity.BLOCK_PAIRS` order.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    S = n_scales if emb is None else emb.shape[0]
    if mode == "equal":
        return [np.full(S, 1.0 / S)]
    if params is None:
        raise ValueError(f"mode {mode} needs a trained model")
    L = emb.shape[1]
    rng = np.random.default_rng(seed)
    merged = tower_outputs(params, emb)
    if mode == "nasf-s":
        if L < 2:
            raise ValueError(f"nasf-s needs at least 2 base segments, got {L}")
        I, J = sample_pair_arrays(L, N, rng)
        return [mean_pair_weights(params, merged, I, J)]
    if L < 6:
        raise ValueError(f"nasf-d needs at least 6 base segments, got {L}")
    split = block_split(L, 3)
    out = []
    for bi, bj in BLOCK_PAIRS:
        lo, hi = split[bi]
        if bi == bj:
            I, J = sample_pair_arrays(hi - lo, N, rng)
            I, J = I + lo, J + lo
        else:
            I, J = _cross_pairs(lo, hi, *split[bj], N, rng)
        out.append(mean_pair_weights(params, merged, I, J))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: NasfParams, path, seed: int = 0, extra: Optional[dict] = None) -> None:
    meta = {
        "format": "msdiar-nasf",
        "version": CHECKPOINT_VERSION,
        "n_scales": params.n_scales,
        "dim": params.dim,
        "hidden": params.hidden,
        "out_dim": params.out_dim,
        "use_bias": params.use_bias,
        "seed": int(seed),
    }
    if extra:
        meta["extra"] = extra
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **params.arrays())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path, n_scales: Optional[int] = None, dim: Optional[int] = None) -> Tuple[NasfParams, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: np.array(z[k], dtype=np.float64) for k in NasfParams.ARRAYS}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("format") != "msdiar-nasf" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
    params = NasfParams(**arrays, use_bias=bool(meta["use_bias"]))
    if (params.n_scales, params.dim, params.hidden, params.out_dim) != (
        meta["n_scales"], meta["dim"], meta["hidden"], meta["out_dim"]
    ):
        raise CheckpointError(f"{path}: array shapes disagree with header")
    if n_scales is not None and params.n_scales != n_scales:
        raise CheckpointError(f"{path}: model has {params.n_scales} scales, session config has {n_scales}")
    if dim is not None and params.dim != dim:
        raise CheckpointError(f"{path}: model expects dim {params.dim}, embeddings have {dim}")
    return params, meta


def mse_by_weight(sessions: Sequence[SessionPairs], w) -> float:
    """Pair-weighted MSE of a fixed weight vector."""
    w = np.asarray(w, dtype=np.float64)
    tot = 0.0
    count = 0
    for s in sessions:
        y = s.C[:, s.I, s.J].T @ w
        r = y - s.d
        tot += float(r @ r)
        count += len(r)
    return tot / count
