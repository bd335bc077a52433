"""Command line entry point: ``msdiar {synth,segment,train,diarize,score,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import nasf
from ._accel import backend
from .affinity import format_matrix
from .nmesc import format_trace
from .pipeline import (
    ManifestEntry,
    PipelineConfig,
    diarize_session,
    load_session,
    missing_files,
    read_manifest,
    session_pairs,
    write_manifest,
)
from .scorer import REPORT_HEADER, DerReport, aggregate, der
from .segmenter import build_multiscale, format_segments
from .session_io import read_rttm, oracle_sad, write_embeddings, write_rttm
from .synth import SynthConfig, gen_corpus

logger = logging.getLogger("msdiar")

ABLATION_SYSTEMS = ("0.5", "1.0", "1.5", "equal", "nasf-d", "nasf-s")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    defaults = PipelineConfig()
    for f in fields(PipelineConfig):
        default = getattr(defaults, f.name)
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, dest=f.name, type=_parse_bool, default=None, metavar="BOOL")
        elif isinstance(default, list):
            p.add_argument(flag, dest=f.name, default=None, metavar="A,B,...")
        else:
            p.add_argument(flag, dest=f.name, type=type(default), default=None)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    defaults = PipelineConfig()
    for f in fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        default = getattr(defaults, f.name)
        if isinstance(default, list):
            elem = type(default[0]) if default else float
            v = [elem(x) for x in v.split(",") if x]
        data[f.name] = v
    return PipelineConfig.from_dict(data).apply_env()


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _entries(cfg: PipelineConfig) -> List[ManifestEntry]:
    if not cfg.manifest:
        raise CliError("no manifest given (--manifest or MSDIAR_MANIFEST)")
    entries = read_manifest(cfg.manifest)
    missing = missing_files(entries, cfg.scales)
    if missing:
        raise CliError("missing files:\n  " + "\n  ".join(missing))
    return entries


def _jsonl(path: Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig) -> int:
    out = _out_dir(cfg)
    scfg = SynthConfig(
        speakers=cfg.speakers[0] if cfg.speakers else 2,
        session_len=cfg.session_len,
        mean_turn=cfg.mean_turn,
        dim=cfg.dim,
        noise=cfg.noise,
        seed=cfg.seed,
        silence_fraction=cfg.silence_fraction,
        scales=cfg.scales,
    )
    entries = []
    for sid, sess in gen_corpus(scfg, cfg.n_sessions, speakers=cfg.speakers):
        rttm = out / f"{sid}.rttm"
        write_rttm(sess.turns, rttm)
        embs = {}
        for sc, emb in zip(cfg.scales, sess.embeddings):
            path = out / f"{sid}.emb{sc.window_ms}.txt"
            write_embeddings(emb, path)
            embs[sc.window_ms] = path
        entries.append(ManifestEntry(sid, rttm, embs))
    manifest = out / "manifest.txt"
    if not entries:
        manifest.write_text("# session_id rttm " + " ".join(f"emb_{s.window_ms}" for s in cfg.scales) + "\n")
    else:
        write_manifest(entries, manifest)
    print(f"wrote {len(entries)} sessions to {manifest}")
    return 0


def cmd_segment(cfg: PipelineConfig, rttm: Optional[str] = None) -> int:
    out = _out_dir(cfg)
    if rttm:
        sources = [(Path(rttm).stem, Path(rttm))]
    else:
        if not cfg.manifest:
            raise CliError("give --rttm or --manifest")
        sources = [(e.session_id, e.rttm) for e in read_manifest(cfg.manifest)]
    for sid, path in sources:
        turns = read_rttm(path)
        msset = build_multiscale(oracle_sad(turns), cfg.scales)
        (out / f"{sid}.segments").write_text(format_segments(msset), encoding="utf-8", newline="\n")
        print(f"{sid}: " + " ".join(f"{s.window_ms}ms={n}" for s, n in zip(cfg.scales, msset.counts())))
    return 0


def cmd_train(cfg: PipelineConfig) -> int:
    entries = _entries(cfg)
    if not entries:
        raise CliError("manifest lists no sessions")
    if not cfg.model:
        raise CliError("no checkpoint path given (--model)")
    sessions = [load_session(e, cfg.scales) for e in entries]
    pairs = [session_pairs(s, cfg.train_pairs_per_session, cfg.seed + i) for i, s in enumerate(sessions)]
    tcfg = nasf.TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        seed=cfg.seed,
        val_fraction=cfg.val_fraction,
    )
    result = nasf.train(pairs, tcfg)
    nasf.save_checkpoint(result.params, cfg.model, seed=cfg.seed, extra={"windows_ms": [s.window_ms for s in cfg.scales]})
    log = Path(cfg.model).with_suffix(".log.jsonl")
    _jsonl(log, result.history)
    for h in result.history:
        tr = "-" if h["train_mse"] is None else f"{h['train_mse']:.6f}"
        print(f"epoch {h['epoch']:3d} train_mse {tr} val_mse {h['val_mse']:.6f} equal_mse {h['equal_mse']:.6f}")
    print(f"best epoch {result.best_epoch}: val_mse {result.best_val_loss:.6f} (equal weights {result.equal_weight_val_loss:.6f})")
    print(f"checkpoint: {cfg.model}")
    return 0


def _load_model(cfg: PipelineConfig):
    if cfg.mode == "equal":
        return None
    if not cfg.model:
        raise CliError(f"mode {cfg.mode} needs --model")
    params, _ = nasf.load_checkpoint(cfg.model, n_scales=len(cfg.scales))
    return params


def _diarize_one(args):
    entry, cfg, params = args
    t0 = time.perf_counter()
    session = load_session(entry, cfg.scales)
    if params is not None and session.embeddings[0].dim != params.dim:
        raise nasf.CheckpointError(f"model expects dim {params.dim}, embeddings have {session.embeddings[0].dim}")
    res = diarize_session(session, cfg, params)
    report = der(session.turns, res.hypothesis, cfg.collar, cfg.score_overlap)
    return session, res, report, time.perf_counter() - t0


def _map(fn, items, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(fn, items)
    else:
        yield from map(fn, items)


def _safe(fn):
    def wrapped(args):
        try:
            return fn(args), None
        except Exception as exc:  # per-session failure is reported, the run continues
            return None, f"{type(exc).__name__}: {exc}"
    return wrapped


def _safe_diarize(args):
    return _safe(_diarize_one)(args)


def cmd_diarize(cfg: PipelineConfig) -> int:
    entries = _entries(cfg)
    params = _load_model(cfg)
    out = _out_dir(cfg)
    records = []
    failed = 0
    for entry, (value, err) in zip(entries, _map(_safe_diarize, [(e, cfg, params) for e in entries], cfg.workers)):
        if err is not None:
            failed += 1
            logger.error("[%s] failed: %s", entry.session_id, err)
            records.append({"session": entry.session_id, "error": err})
            continue
        session, res, report, secs = value
        write_rttm(res.turns, out / f"{entry.session_id}.rttm")
        if cfg.dump_affinity:
            for s in range(res.tensor.n_scales):
                (out / f"{entry.session_id}.aff{s}.txt").write_text(format_matrix(res.tensor.C[s]))
            (out / f"{entry.session_id}.fused.txt").write_text(format_matrix(res.fused))
            (out / f"{entry.session_id}.nme.txt").write_text(format_trace(res.cluster.trace))
        weights = [np.round(w, 6).tolist() for w in res.weights]
        logger.info("[%s] mode=%s weights=%s k=%d", entry.session_id, cfg.mode, weights, res.cluster.k)
        records.append({
            "session": entry.session_id,
            "mode": cfg.mode,
            "weights": weights,
            "k": res.cluster.k,
            "p": res.cluster.p,
            "n_base": res.tensor.L,
            "seconds": round(secs, 3),
        })
    _jsonl(out / "diarize.jsonl", records)
    print(f"diarized {len(entries) - failed}/{len(entries)} sessions into {out}")
    return 1 if failed else 0


def score_corpus(cfg: PipelineConfig, hyp_dir: Path, entries: Sequence[ManifestEntry]):
    reports = []
    for e in entries:
        hyp_path = hyp_dir / f"{e.session_id}.rttm"
        if not hyp_path.exists():
            raise CliError(f"missing hypothesis {hyp_path}")
        ref = read_rttm(e.rttm)
        hyp = [t for t in read_rttm(hyp_path) if t.recording_id == e.session_id]
        reports.append((e.session_id, der(ref, hyp, cfg.collar, cfg.score_overlap)))
    return reports


def format_report(reports, total: DerReport) -> str:
    lines = [f"{'SESSION':<16} {REPORT_HEADER}"]
    lines += [f"{sid:<16} {r.line()}" for sid, r in reports]
    lines.append(f"{'ALL':<16} {total.line()}")
    return "\n".join(lines) + "\n"


def cmd_score(cfg: PipelineConfig) -> int:
    if not cfg.manifest:
        raise CliError("no manifest given (--manifest or MSDIAR_MANIFEST)")
    entries = read_manifest(cfg.manifest)
    hyp_dir = Path(cfg.hyp_dir or cfg.out_dir)
    reports = score_corpus(cfg, hyp_dir, entries)
    total = aggregate([r for _, r in reports])
    text = format_report(reports, total)
    print(text, end="")
    out = _out_dir(cfg)
    (out / "score.txt").write_text(text)
    _jsonl(out / "score.jsonl", [
        {"session": sid, "miss": r.miss, "fa": r.false_alarm, "confusion": r.confusion,
         "total": r.total_speech, "der": r.der} for sid, r in reports + [("ALL", total)]
    ])
    return 0


def system_config(cfg: PipelineConfig, system: str) -> PipelineConfig:
    if system in nasf.MODES:
        return PipelineConfig(**{**cfg.to_dict(), "mode": system})
    return cfg.single_scale(float(system))


def run_ablation(cfg: PipelineConfig, sessions, params, systems=ABLATION_SYSTEMS):
    """DER per system over in-memory sessions. ``sessions`` are full multi-scale sessions."""
    from .pipeline import make_session

    results = {}
    for system in systems:
        scfg = system_config(cfg, system)
        reports = []
        weights = []
        for sess in sessions:
            if len(scfg.windows) != len(cfg.windows):
                by_window = {sc.window_ms: e for sc, e in zip(cfg.scales, sess.embeddings)}
                sub = make_session(sess.session_id, sess.turns, by_window, scfg.scales)
            else:
                sub = sess
            res = diarize_session(sub, scfg, params if scfg.mode != "equal" else None)
            reports.append(der(sess.turns, res.hypothesis, cfg.collar, cfg.score_overlap))
            weights.append([w.tolist() for w in res.weights])
        results[system] = (aggregate(reports), reports, weights)
    return results


def format_ablation(results) -> str:
    header = " | ".join(f"{s:>7}" for s in results)
    row = " | ".join(f"{100 * r[0].der:7.2f}" for r in results.values())
    return f"DER (%)  {header}\n         {row}\n"


def cmd_ablate(cfg: PipelineConfig) -> int:
    entries = _entries(cfg)
    params = None
    systems = list(ABLATION_SYSTEMS)
    if cfg.model:
        params, _ = nasf.load_checkpoint(cfg.model, n_scales=len(cfg.scales))
    else:
        logger.warning("no model given; skipping nasf-s and nasf-d")
        systems = [s for s in systems if s not in ("nasf-s", "nasf-d")]
    sessions = [load_session(e, cfg.scales) for e in entries]
    results = run_ablation(cfg, sessions, params, systems)
    text = format_ablation(results)
    if "nasf-s" in results and "nasf-d" in results:
        s, d = results["nasf-s"][0].der, results["nasf-d"][0].der
        text += f"NASF-S {'<' if s < d else '>=' } NASF-D ({100 * s:.2f} vs {100 * d:.2f})\n"
    print(text, end="")
    out = _out_dir(cfg)
    (out / "ablation.txt").write_text(text)
    records = []
    for system, (total, reports, weights) in results.items():
        for e, r, w in zip(entries, reports, weights):
            records.append({"system": system, "session": e.session_id, "der": r.der, "weights": w})
        records.append({"system": system, "session": "ALL", "der": total.der})
    _jsonl(out / "ablation.jsonl", records)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msdiar", description="Multi-scale diarization with neural affinity score fusion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic corpus"),
        ("segment", "write multi-scale segment files"),
        ("train", "train the NASF weight network"),
        ("diarize", "diarize every session of a manifest"),
        ("score", "score hypothesis RTTMs against references"),
        ("ablate", "compare single-scale, equal-weight and NASF systems"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        _add_config_flags(p)
        if name == "segment":
            p.add_argument("--rttm", help="segment a single RTTM instead of a manifest")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logger.debug("kernel backend: %s", backend())
    try:
        cfg = build_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "segment":
            return cmd_segment(cfg, args.rttm)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "diarize":
            return cmd_diarize(cfg)
        if args.command == "score":
            return cmd_score(cfg)
        return cmd_ablate(cfg)
    except (CliError, ValueError, TypeError, OSError, nasf.TrainingDivergedError) as exc:
        print(f"msdiar {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
