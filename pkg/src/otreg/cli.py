"""``otreg`` command line: align, compress, unique, train, heatmap, gradcheck.

Exit codes: 0 success, 1 gradient check failed, 2 file/format/config error,
3 numerical failure.  Output files are only written once every result is
computed, each through a temp file and rename.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    DomainError,
    FormatError,
    NumericalOverflowError,
)
from .io import atomic_write, dumps_json, encode_emb, encode_matrix, file_digest, load_matrix
from .losses import DEFAULT_LAMBDA_SPR, ot_loss
from .ot import SinkhornConfig, build_cost, sinkhorn
from .sequence import ot_compress, pairwise_distance_map, unique_targets

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _err(msg):
    print(f"otreg: {msg}", file=sys.stderr)


def _load(path: str) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return load_matrix(path)
    except OSError as exc:
        raise _Fail(EXIT_INPUT, f"{path}: {exc.strerror or exc}") from None
    except FormatError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None


def _load_row(path: str) -> np.ndarray:
    m = _load(path)
    if m.shape[0] != 1:
        raise _Fail(EXIT_INPUT, f"{path}: expected a single row, got {m.shape[0]}")
    return m


def _inputs(**paths) -> Dict[str, dict]:
    return {k: {"path": str(p), "sha256": file_digest(p)} for k, p in paths.items()}


def _commit(outputs: Dict[Path, bytes]) -> None:
    for path, data in outputs.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, data)


def _emit_report(report: dict, path: Optional[str], outputs: Dict[Path, bytes]) -> None:
    text = dumps_json(report)
    if path:
        outputs[Path(path)] = text.encode("utf-8")
    else:
        sys.stdout.write(text)


def _encode_out(path: str, m: np.ndarray) -> bytes:
    try:
        return encode_matrix(path, m)
    except FormatError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None


# -- commands -----------------------------------------------------------------------


def cmd_align(args) -> int:
    src, tgt = _load(args.source), _load(args.target)
    if src.shape[1] != tgt.shape[1]:
        raise _Fail(EXIT_INPUT, f"column mismatch: source {src.shape[1]}, target {tgt.shape[1]}")
    cfg = SinkhornConfig(args.epsilon, args.max_iters, args.tol, not args.linear, args.newton_steps)
    cost = build_cost(src, tgt)
    plan = sinkhorn(cost, cfg)
    losses = ot_loss(plan, cost, args.lambda_spr).floats()
    outputs: Dict[Path, bytes] = {}
    if args.plan_out:
        outputs[Path(args.plan_out)] = _encode_out(args.plan_out, plan.value)
    report = {
        "command": "align",
        "inputs": _inputs(source=args.source, target=args.target),
        "config": {
            "epsilon": cfg.epsilon,
            "max_iterations": cfg.max_iterations,
            "tolerance": cfg.tolerance,
            "log_domain": cfg.log_domain,
            "newton_steps": cfg.newton_steps,
            "lambda_spr": args.lambda_spr,
        },
        "results": {
            **losses,
            "marginal_error": plan.marginal_error,
            "iterations": plan.iterations_used,
            "converged": plan.converged,
            "shape": list(plan.shape),
        },
    }
    _emit_report(report, args.report_out, outputs)
    _commit(outputs)
    return EXIT_OK


def cmd_compress(args) -> int:
    f, pad = _load(args.input), _load_row(args.pad)
    if f.shape[0] and f.shape[1] != pad.shape[1]:
        raise _Fail(EXIT_INPUT, f"dimension mismatch: input {f.shape[1]}, pad {pad.shape[1]}")
    out, rep = ot_compress(f, pad, args.merge_threshold, args.drop_threshold)
    if rep.empty:
        _err("compressed sequence is empty")
    outputs = {Path(args.out): _encode_out(args.out, np.asarray(out).reshape(-1, pad.shape[1]))}
    report = {
        "command": "compress",
        "inputs": _inputs(input=args.input, pad=args.pad),
        "config": {"merge_threshold": args.merge_threshold, "drop_threshold": args.drop_threshold},
        "results": rep.as_dict(),
    }
    _emit_report(report, args.report_out, outputs)
    _commit(outputs)
    return EXIT_OK


def cmd_unique(args) -> int:
    e, pad = _load(args.input), _load_row(args.pad)
    if e.shape[1] != pad.shape[1]:
        raise _Fail(EXIT_INPUT, f"dimension mismatch: input {e.shape[1]}, pad {pad.shape[1]}")
    res = unique_targets(e, pad, args.threshold)
    map_out = Path(args.map_out) if args.map_out else Path(args.out).with_suffix(".map.json")
    index_map = {
        "command": "unique",
        "inputs": _inputs(input=args.input, pad=args.pad),
        "config": {"threshold": args.threshold},
        "results": {
            "n_g": res.n_g,
            "source_rows": res.source_rows,
            "pad_row_index": res.pad_row_index,
            # rows of the input are 0..n-1; the appended pad row is n
            "pad_source_row": e.shape[0],
        },
    }
    outputs = {Path(args.out): _encode_out(args.out, res.embeddings), map_out: dumps_json(index_map).encode()}
    _commit(outputs)
    return EXIT_OK


def _pixel(d: float) -> int:
    # round half up on the fixed [0, 2] scale
    return min(255, max(0, math.floor(255.0 * d / 2.0 + 0.5)))


def heatmap_pgm(dist: np.ndarray) -> bytes:
    h, w = dist.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(_pixel(float(d))) for d in row) for row in dist]
    return ("\n".join(lines) + "\n").encode("ascii")


def cmd_heatmap(args) -> int:
    src, tgt = _load(args.source), _load(args.target)
    if src.shape[1] != tgt.shape[1]:
        raise _Fail(EXIT_INPUT, f"column mismatch: source {src.shape[1]}, target {tgt.shape[1]}")
    dist = pairwise_distance_map(src, tgt)
    ext = Path(args.out).suffix.lower()
    if ext == ".pgm":
        data = heatmap_pgm(dist)
    elif ext == ".csv":
        data = _encode_out(args.out, dist)
    else:
        raise _Fail(EXIT_INPUT, f"{args.out}: heatmap output must be .pgm or .csv")
    _commit({Path(args.out): data})
    return EXIT_OK


def _parse_sizes(text: str):
    sizes = []
    for part in text.split(","):
        try:
            a, b = part.lower().split("x")
            sizes.append((int(a), int(b)))
        except ValueError:
            raise _Fail(EXIT_INPUT, f"bad size {part!r}; expected e.g. 6x4") from None
    return sizes


def cmd_gradcheck(args) -> int:
    from .gradcheck import THRESHOLD, run_gradcheck

    sizes = _parse_sizes(args.sizes)
    if args.trials == 0:
        _err("warning: trials=0, nothing checked")
        return EXIT_OK
    res = run_gradcheck(sizes, args.trials, args.seed, inject_error=args.inject_gradient_error)
    print(f"worst relative error {res.worst:.3e} ({res.worst_case})")
    if args.report_out:
        report = {
            "command": "gradcheck",
            "config": {"sizes": [list(s) for s in sizes], "trials": args.trials, "seed": args.seed},
            "results": {"worst": res.worst, "worst_case": res.worst_case, "checks": res.checks},
        }
        _commit({Path(args.report_out): dumps_json(report).encode()})
    if not res.passed:
        _err(f"gradient check failed: {res.worst_case} has relative error {res.worst:.3e} >= {THRESHOLD:g}")
        return EXIT_CHECK
    return EXIT_OK


def _param_files(prefix: str, params) -> Dict[str, bytes]:
    return {f"params/{prefix}_{name}.emb": encode_emb(np.asarray(v)) for name, v in params.values().as_dict().items()}


def cmd_train(args) -> int:
    from .trainer import format_config, parse_config, run_experiment

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_INPUT, f"{args.config}: {exc.strerror or exc}") from None
    try:
        exp = parse_config(text)
    except ConfigError as exc:
        raise _Fail(EXIT_INPUT, f"{args.config}: {exc}") from None

    lines: List[str] = []
    result = run_experiment(exp, on_report=lambda r: lines.append(dumps_json(r.as_dict(), compact=True)))
    stage2 = exp.train.stage2_epochs > 0

    files: Dict[str, bytes] = {"steps.jsonl": "".join(lines).encode()}
    files.update(_param_files("stage1", result.stage1))
    files["eval_stage1.json"] = dumps_json(result.eval_stage1.as_dict()).encode()
    if stage2:
        files.update(_param_files("final", result.final))
        files["eval_final.json"] = dumps_json(result.eval_final.as_dict()).encode()
    report = {
        "command": "train",
        "inputs": _inputs(config=args.config),
        "config": format_config(exp).splitlines(),
        "results": {
            "stage1_steps": len(result.stage1_reports),
            "stage2_steps": len(result.stage2_reports),
            "eval_stage1": result.eval_stage1.as_dict(),
            "eval_final": result.eval_final.as_dict() if stage2 else None,
            "files": sorted(files),
        },
    }
    files["run_report.json"] = dumps_json(report).encode()
    out = Path(args.out_dir)
    _commit({out / name: data for name, data in files.items()})
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otreg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"otreg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("align", help="entropic OT plan and OT loss between two matrices")
    a.add_argument("--source", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--epsilon", type=float, default=0.1)
    a.add_argument("--max-iters", type=int, default=500)
    a.add_argument("--tol", type=float, default=1e-8)
    a.add_argument("--newton-steps", type=int, default=0)
    a.add_argument("--linear", action="store_true", help="linear-domain iterations")
    a.add_argument("--lambda-spr", type=float, default=DEFAULT_LAMBDA_SPR)
    a.add_argument("--plan-out")
    a.add_argument("--report-out")
    a.set_defaults(func=cmd_align)

    c = sub.add_parser("compress", help="pairwise merge + pad drop")
    c.add_argument("--input", required=True)
    c.add_argument("--pad", required=True)
    c.add_argument("--merge-threshold", type=float, default=0.9)
    c.add_argument("--drop-threshold", type=float, default=0.9)
    c.add_argument("--out", required=True)
    c.add_argument("--report-out")
    c.set_defaults(func=cmd_compress)

    u = sub.add_parser("unique", help="unique target embeddings (input rows + pad)")
    u.add_argument("--input", required=True)
    u.add_argument("--pad", required=True)
    u.add_argument("--threshold", type=float, default=0.999)
    u.add_argument("--out", required=True)
    u.add_argument("--map-out")
    u.set_defaults(func=cmd_unique)

    t = sub.add_parser("train", help="two-stage training on the synthetic corpus")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    h = sub.add_parser("heatmap", help="cosine distance map as PGM (P2) or CSV")
    h.add_argument("--source", required=True)
    h.add_argument("--target", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heatmap)

    g = sub.add_parser("gradcheck", help="finite-difference check of all loss paths")
    g.add_argument("--sizes", default="2x2,4x3,6x4")
    g.add_argument("--trials", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--report-out")
    g.add_argument("--inject-gradient-error", type=float, default=0.0, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except _Fail as exc:
        _err(str(exc))
        return exc.code
    except DivergenceError as exc:
        _err(f"{exc} (sample index {exc.sample_index})")
        return EXIT_NUMERIC
    except (NumericalOverflowError, DegenerateInputError, DomainError) as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    except (FormatError, DimensionError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except OSError as exc:
        _err(str(exc))
        return EXIT_INPUT
    # wall time goes to stderr so file outputs stay byte-deterministic
    print(f"otreg {args.command}: {time.perf_counter() - start:.3f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
