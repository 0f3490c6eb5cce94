"""Command-line front end: synthesize benchmark data, pool features, fit
adaptation models, and evaluate them with JSON reports.

Exit codes: 0 success, 2 usage error, 3 data-format error, 4 a numerical
convergence warning was raised and ``--strict`` was given.

All numerical kernels run single-threaded when launched through this entry
point so that seeded pipelines are bit-reproducible; the ``TENSOR_DA_THREADS``
environment variable caps any auxiliary worker parallelism (none of the
current kernels use workers, so results never depend on it).
"""

from __future__ import annotations

import os

# Thread pinning must precede the first numpy import; this module is the
# first thing loaded by the console script and `python -m tensorda`.
for _var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, "1")

import argparse
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .adapt import NTSL, TAISL, ConvergenceWarning, default_ranks
from .data_io import (
    DataFormatError,
    ShiftSpec,
    TensorSet,
    generate_shift,
    read_model,
    read_set,
    spatial_pool,
    write_model,
    write_set,
    write_tensor,
)
from .evaluate import accuracy, class_divergence, train_classifier
from .tensor_ops import multi_mode_product, unfold
from .tucker import TensorSubspace

REPORT_VERSION = 1

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "tensorda run report",
    "type": "object",
    "required": ["command", "config", "inputs", "timings_ms", "seed", "version"],
    "properties": {
        "command": {"enum": ["fit", "eval"]},
        "config": {"type": "object"},
        "inputs": {
            "type": "object",
            "additionalProperties": {"$ref": "#/definitions/file_ref"},
        },
        "outputs": {
            "type": "object",
            "additionalProperties": {"$ref": "#/definitions/file_ref"},
        },
        "loss_trace": {
            "type": "array",
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {"type": "number"},
            },
        },
        "accuracies": {
            "type": "object",
            "additionalProperties": {"type": ["number", "null"]},
        },
        "discrepancy": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["d_a", "d_a_w", "d_a_b", "j_s"],
                "properties": {
                    "d_a": {"type": "number", "minimum": 0, "maximum": 2},
                    "d_a_w": {"type": "number", "minimum": 0, "maximum": 2},
                    "d_a_b": {"type": "number", "minimum": 0, "maximum": 2},
                    "j_s": {"type": "number", "minimum": 0},
                },
            },
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
        "timings_ms": {
            "type": "object",
            "additionalProperties": {"type": "number"},
        },
        "seed": {"type": ["integer", "null"]},
        "version": {"type": "integer"},
    },
    "definitions": {
        "file_ref": {
            "type": "object",
            "required": ["path", "sha256"],
            "properties": {
                "path": {"type": "string"},
                "sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
            },
        }
    },
}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _file_ref(path) -> dict:
    return {"path": str(path), "sha256": _sha256(path)}


def _write_report(path, report) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive integers, got {text!r}")
    return dims


def _thread_cap() -> int:
    raw = os.environ.get("TENSOR_DA_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"TENSOR_DA_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ValueError("TENSOR_DA_THREADS must be >= 1")
    return cap


def _flatten_samples(batch: np.ndarray) -> np.ndarray:
    """Per-sample feature matrix (n_samples, prod(structural dims))."""
    return unfold(batch, batch.ndim - 1)


def _resolve_cli_dims(structural_shape, dims):
    """CLI default dims: the 3-mode convolutional layout gets (6, 6, 128)
    clamped to the data; other orders use ceil(n/2) per mode."""
    if dims is not None:
        return tuple(dims)
    if len(structural_shape) == 3:
        return tuple(min(d, n) for d, n in zip((6, 6, 128), structural_shape))
    return default_ranks(structural_shape)


# ---------------------------------------------------------------------------
# Baselines that exist only at the CLI level.


def _fit_pca_sections(xs, xt, ranks):
    flat = np.vstack([_flatten_samples(xs), _flatten_samples(xt)])
    mean = flat.mean(axis=0)
    centered = flat - mean
    n_comp = min(int(np.prod(ranks)), centered.shape[1], max(centered.shape[0] - 1, 1))
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:n_comp].T
    peaks = np.abs(comps).argmax(axis=0)
    signs = np.sign(comps[peaks, np.arange(comps.shape[1])])
    signs[signs == 0] = 1.0
    return {"pcac": comps * signs, "pcam": mean}


def _model_transforms(model: dict):
    """Source/target feature functions (batch tensor -> (n, d) matrix)."""
    method = model["meta"]["method"]
    if method == "na":
        return _flatten_samples, _flatten_samples
    if method == "pca":
        comps, mean = model["pcac"], np.asarray(model["pcam"]).ravel()

        def _project(batch):
            return (_flatten_samples(batch) - mean) @ comps

        return _project, _project
    if method in ("ntsl", "taisl"):
        subspace = TensorSubspace(tuple(model["subs"]))
        mats = model["algn"]

        def _source(batch):
            aligned = multi_mode_product(batch, mats, modes=range(len(mats)))
            return _flatten_samples(subspace.project(aligned))

        def _target(batch):
            return _flatten_samples(subspace.project(batch))

        return _source, _target
    raise DataFormatError(f"model has unknown method {method!r}")


# ---------------------------------------------------------------------------
# Subcommands.


def cmd_synth(args) -> int:
    spec = ShiftSpec(
        class_count=args.classes,
        samples_per_class=args.per_class,
        mode_dims=args.dims,
        true_dims=args.true_dims,
        kind=args.kind,
        rotation_angle_scale=args.angle,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source, target, rotations = generate_shift(spec)
    source_path = out_dir / "source.tnsb"
    target_path = out_dir / "target.tnsb"
    align_path = out_dir / "alignment.tnsm"
    write_set(source_path, source)
    write_set(target_path, target)
    write_model(
        align_path,
        {
            "meta": {
                "method": "ground_truth",
                "kind": spec.kind,
                "angle": spec.rotation_angle_scale,
                "sigma": spec.noise_sigma,
                "seed": spec.seed,
            },
            "algn": rotations,
        },
    )
    listing = {
        "files": {
            "source": _file_ref(source_path),
            "source_labels": _file_ref(str(source_path) + ".labels"),
            "target": _file_ref(target_path),
            "target_labels": _file_ref(str(target_path) + ".labels"),
            "alignment": _file_ref(align_path),
        },
        "seed": spec.seed,
    }
    print(json.dumps(listing, sort_keys=True, indent=2))
    return 0


def cmd_pool(args) -> int:
    tset = read_set(args.input)
    pooled = spatial_pool(tset.data, args.out_h, args.out_w)
    write_set(Path(args.out), TensorSet(pooled, tset.labels))
    return 0


def cmd_fit(args) -> int:
    timings = {}
    t0 = time.perf_counter()
    source = read_set(args.source)
    target = read_set(args.target)
    if source.data.shape[:-1] != target.data.shape[:-1]:
        raise ValueError(
            f"structural mode sizes differ: {source.data.shape[:-1]} vs "
            f"{target.data.shape[:-1]}"
        )
    timings["load"] = (time.perf_counter() - t0) * 1e3

    ranks = _resolve_cli_dims(source.data.shape[:-1], args.dims)
    meta = {
        "method": args.method,
        "ranks": list(ranks),
        "lam": args.lam,
        "max_iter": args.iters,
        "tol": args.tol,
        "seed": args.seed,
        "source_sha256": _sha256(args.source),
        "target_sha256": _sha256(args.target),
    }
    sections: dict = {"meta": meta}
    loss_trace: list[tuple[int, float]] = []
    caught: list[str] = []

    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as records:
        warnings.simplefilter("always", ConvergenceWarning)
        if args.method == "na":
            pass
        elif args.method == "pca":
            sections.update(_fit_pca_sections(source.data, target.data, ranks))
        else:
            if args.method == "ntsl":
                est = NTSL(ranks=ranks)
            else:
                est = TAISL(
                    ranks=ranks, lam=args.lam, max_iter=args.iters, tol=args.tol
                )
            est.fit(source.data, target.data)
            sections["subs"] = list(est.subspace_.factors)
            sections["algn"] = est.alignment_
            sections["gsrc"] = est.core_source_
            sections["gtgt"] = est.core_target_
            loss_trace = est.loss_trace_
    caught = [str(r.message) for r in records if issubclass(r.category, ConvergenceWarning)]
    timings["fit"] = (time.perf_counter() - t0) * 1e3

    if loss_trace:
        sections["loss"] = np.array(loss_trace, dtype=np.float64)

    t0 = time.perf_counter()
    write_model(args.out, sections)
    timings["save"] = (time.perf_counter() - t0) * 1e3

    report = {
        "command": "fit",
        "config": {
            "method": args.method,
            "ranks": list(ranks),
            "lam": args.lam,
            "max_iter": args.iters,
            "tol": args.tol,
            "strict": bool(args.strict),
            "thread_cap": _thread_cap(),
        },
        "inputs": {
            "source": _file_ref(args.source),
            "target": _file_ref(args.target),
        },
        "outputs": {"model": _file_ref(args.out)},
        "loss_trace": [[int(i), float(v)] for i, v in loss_trace],
        "warnings": caught,
        "timings_ms": {k: round(v, 3) for k, v in timings.items()},
        "seed": args.seed,
        "version": REPORT_VERSION,
    }
    _write_report(args.report, report)

    for message in caught:
        print(f"warning: {message}", file=sys.stderr)
    if caught and args.strict:
        return 4
    return 0


def cmd_eval(args) -> int:
    timings = {}
    t0 = time.perf_counter()
    model = read_model(args.model)
    source = read_set(args.source)
    target = read_set(args.target)
    if source.labels is None:
        raise ValueError("evaluation requires a labeled source set")
    timings["load"] = (time.perf_counter() - t0) * 1e3

    method = model["meta"]["method"]
    methods = {"na": (_flatten_samples, _flatten_samples)}
    if method != "na":
        methods[method] = _model_transforms(model)

    accuracies = {}
    discrepancy = {}
    t0 = time.perf_counter()
    for name, (to_source_feats, to_target_feats) in sorted(methods.items()):
        feats_s = to_source_feats(source.data)
        feats_t = to_target_feats(target.data)
        clf = train_classifier(feats_s, source.labels, ridge=args.ridge)
        pseudo = clf.predict(feats_t)
        if target.labels is not None:
            accuracies[name] = accuracy(clf, feats_t, target.labels)
        report = class_divergence(
            feats_s,
            source.labels,
            feats_t,
            pseudo,
            folds=args.folds,
            seed=args.seed,
        )
        discrepancy[name] = report.as_dict()
    timings["evaluate"] = (time.perf_counter() - t0) * 1e3

    report = {
        "command": "eval",
        "config": {
            "method": method,
            "folds": args.folds,
            "ridge": args.ridge,
            "strict": bool(args.strict),
            "thread_cap": _thread_cap(),
        },
        "inputs": {
            "model": _file_ref(args.model),
            "source": _file_ref(args.source),
            "target": _file_ref(args.target),
        },
        "accuracies": accuracies,
        "discrepancy": discrepancy,
        "timings_ms": {k: round(v, 3) for k, v in timings.items()},
        "seed": args.seed,
        "version": REPORT_VERSION,
    }
    _write_report(args.report, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorda",
        description="Tensor-subspace unsupervised domain adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-domain benchmark")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--dims", type=_parse_dims, default=(6, 6, 32))
    p.add_argument("--true-dims", type=_parse_dims, default=(3, 3, 8))
    p.add_argument("--kind", choices=["mode_rotation", "additive_noise", "mixed"],
                   default="mode_rotation")
    p.add_argument("--angle", type=float, default=0.5,
                   help="rotation blend toward a random orthogonal matrix (0 = identity)")
    p.add_argument("--sigma", type=float, default=0.0, help="ambient noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pool", help="max-pool the spatial modes to a fixed grid")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-h", type=int, default=6)
    p.add_argument("--out-w", type=int, default=6)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("fit", help="fit an adaptation model")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=["ntsl", "taisl", "na", "pca"], default="taisl")
    p.add_argument("--dims", type=_parse_dims, default=None,
                   help="subspace dimension per mode (default: 6,6,128 clamped for "
                        "3-mode samples, ceil(n/2) otherwise)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-5)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--strict", action="store_true",
                   help="exit 4 when a convergence warning is raised")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ridge", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
