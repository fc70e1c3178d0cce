"""Command-line entry point: ``siman {binarize,dist,train,kernel-bench}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage error.

``binarize`` prints one JSON object per line with keys, in order::

    mode, n, k, code, objective, cosine, quantization_error[, oracle]

``code`` is the {0,1} code as a bit string (for ``--mode sign`` the sign
code mapped through ``(1 + b) / 2``).  ``objective`` is the cosine between
the code and ``|w|``; ``cosine`` and ``quantization_error`` compare ``w``
with the ±1 code ``2b - 1``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import bitkernel as bk
from . import data as D
from .binarize import (
    BinaryCode,
    brute_force_binarize,
    cosine,
    half_half_binarize,
    objective_value,
    optimal_binarize,
    quantization_error,
    sign_binarize_scaled,
)
from .checkpoint import save_checkpoint
from .dist import DistributionModel, empirical_plus_fraction, optimal_threshold, sample_weights
from .errors import AllZero, InvalidArgs, NonFiniteGradient, SimanError
from .train import (
    METRIC_COLUMNS,
    MODES,
    STATS_COLUMNS,
    ModelSpec,
    NetworkState,
    TrainConfig,
    config_dict,
    layer_stats,
    stats_rows,
    train,
)

ORACLE_MAX_N = 16


class UsageError(Exception):
    pass


def write_manifest(output, args: argparse.Namespace, outputs: list[str], extra=None) -> None:
    """Record the exact invocation next to ``output`` as ``<output>.manifest``."""
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    man = {"subcommand": args.command, "flags": flags, "seed": flags.get("seed"),
           "version": __version__, "outputs": outputs}
    if extra:
        man.update(extra)
    with open(f"{output}.manifest", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _parse_random(spec: str):
    try:
        n, kind, seed = spec.split(",")
        model = DistributionModel(kind.strip().lower(), 1.0)
        n, seed = int(n), int(seed)
    except (ValueError, SimanError) as exc:
        raise UsageError(f"--random expects n,laplace|gauss,seed; got {spec!r}") from exc
    if n < 1:
        raise UsageError("--random needs n >= 1")
    return sample_weights(model, n, seed)


def _read_vector(path: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").replace(",", " ")
    try:
        w = np.array([float(t) for t in text.split()])
    except ValueError as exc:
        raise UsageError(f"{path}: not a list of numbers") from exc
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise UsageError(f"{path}: need at least one finite number")
    return w


def cmd_binarize(args) -> int:
    w = _read_vector(args.input) if args.input else _parse_random(args.random)
    if args.mode == "optimal":
        code = optimal_binarize(w)
    elif args.mode == "half":
        code = half_half_binarize(w)
    else:
        code = BinaryCode.from_bits((sign_binarize_scaled(w).bits > 0).astype(np.uint8))
    direction = code.to_pm1()
    rec = {
        "mode": args.mode,
        "n": int(w.size),
        "k": code.ones,
        "code": "".join(map(str, code.bits.tolist())),
        "objective": objective_value(w, code) if code.ones and np.any(w) else None,
        "cosine": cosine(w, direction) if np.any(w) else None,
        "quantization_error": quantization_error(w, direction),
    }
    if args.oracle:
        if w.size > ORACLE_MAX_N:
            raise UsageError(f"--oracle supports n <= {ORACLE_MAX_N}")
        ref = brute_force_binarize(w)
        ok = abs(objective_value(w, ref) - objective_value(w, optimal_binarize(w))) <= 1e-12
        rec["oracle"] = "match" if ok else "mismatch"
    print(json.dumps(rec))
    return 0 if rec.get("oracle", "match") == "match" else 1


def cmd_dist(args) -> int:
    try:
        model = DistributionModel(args.kind, args.scale)
    except SimanError as exc:
        raise UsageError(str(exc)) from exc
    res = optimal_threshold(model)
    header = ["kind", "scale", "t_star", "p_plus"]
    row = [args.kind, float(args.scale), res.t_star, res.p_plus]
    if args.montecarlo:
        try:
            n, seed = (int(v) for v in args.montecarlo.split(","))
        except ValueError as exc:
            raise UsageError("--montecarlo expects n,seed") from exc
        header.append("empirical_p")
        row.append(empirical_plus_fraction(sample_weights(model, n, seed)))
    text = D.csv_text(header, [row])
    sys.stdout.write(text)
    if args.output:
        D.ensure_parent(args.output)
        Path(args.output).write_text(text, encoding="utf-8")
        write_manifest(args.output, args, [args.output])
    return 0


def parse_dataset(spec: str, seed: int, train_subset: int | None, test_subset: int | None):
    kind, _, rest = spec.partition(":")
    if kind == "synth":
        opts = {"classes": "4", "dim": "192", "per_class": "625", "separation": "10",
                "seed": str(seed), "shape": "3x8x8", "test": "500"}
        for item in filter(None, rest.split(",")):
            key, eq, val = item.partition("=")
            if not eq or key not in opts:
                raise UsageError(f"bad synth option {item!r}; known: {sorted(opts)}")
            opts[key] = val
        try:
            shape = tuple(int(v) for v in opts["shape"].split("x"))
            ds = D.synth_blobs(int(opts["classes"]), int(opts["dim"]), int(opts["per_class"]),
                               float(opts["separation"]), int(opts["seed"]), shape)
            return D.split(ds, int(opts["test"]), int(opts["seed"]))
        except (ValueError, SimanError) as exc:
            raise UsageError(f"bad synth spec {spec!r}: {exc}") from exc
    if kind == "cifar10":
        if not rest:
            raise UsageError("cifar10 dataset needs a path: cifar10:/path/to/batches")
        tr = D.load_cifar10(rest, "train")
        te = D.load_cifar10(rest, "test")
        if train_subset:
            tr = D.take_per_class(tr, train_subset, seed)
        if test_subset:
            te = D.take_per_class(te, test_subset, seed)
        return tr, te
    raise UsageError(f"unknown dataset kind {kind!r}; use synth:... or cifar10:PATH")


def cmd_train(args) -> int:
    tr, te = parse_dataset(args.dataset, args.seed, args.train_subset, args.test_subset)
    kw = dict(epochs=args.epochs, seed=args.seed, batch_size=args.batch_size,
              learning_rate=args.lr, momentum=args.momentum,
              weight_decay_other=args.decay_other,
              augment=args.augment if args.augment is not None else tr.is_image)
    if args.decay_binarized is not None:
        kw["weight_decay_binarized"] = args.decay_binarized
    try:
        config = TrainConfig.for_mode(args.mode, **kw)
    except InvalidArgs as exc:
        raise UsageError(str(exc)) from exc
    spec = ModelSpec(tr.images.shape[1], tr.classes)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path, ckpt_path, stats_path = out / "metrics.csv", out / "checkpoint.simn", out / "layer_stats.csv"

    def progress(row):
        if not args.quiet:
            print(" ".join(f"{k}={D.format_value(row[k])}" for k in METRIC_COLUMNS),
                  file=sys.stderr, flush=True)

    state = NetworkState.initial(spec, config)
    state, metrics = train(spec, (tr, te), config, state, on_epoch=progress)
    D.write_csv(metrics_path, METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in metrics])
    save_checkpoint(state, ckpt_path)
    D.write_csv(stats_path, STATS_COLUMNS, stats_rows(layer_stats(state)))
    outputs = [str(metrics_path), str(ckpt_path), str(stats_path)]
    extra = {"config": config_dict(config), "train_size": len(tr), "test_size": len(te)}
    for p in outputs:
        write_manifest(p, args, outputs, extra)
    return 0


def _bench_case(op: str, n: int, rng: np.random.Generator):
    """Build one random case; return (callable, packed result, float reference)."""
    if op == "dot":
        a, b = rng.integers(0, 2, size=(2, n))
        pa, pb = bk.pack(a), bk.pack(b)
        ref = int((2.0 * a - 1) @ (2.0 * b - 1))
        return (lambda: bk.binary_dot(pa, pb)), ref
    rows = 64
    wbits = rng.integers(0, 2, size=(rows, n))
    xbits = rng.integers(0, 2, size=n)
    W, x = bk.pack_rows(wbits), bk.pack(xbits)
    ref = ((2.0 * wbits - 1) @ (2.0 * xbits - 1)).astype(np.int64)
    return (lambda: bk.binary_matvec(W, x, np.ones(rows)).raw), ref


def cmd_kernel_bench(args) -> int:
    try:
        sizes = [int(v) for v in args.n.split(",")]
    except ValueError as exc:
        raise UsageError("--n expects a comma-separated list of sizes") from exc
    if any(s < 1 for s in sizes) or args.reps < 1:
        raise UsageError("sizes and --reps must be >= 1")
    rng = np.random.default_rng(args.seed)
    rows, all_exact = [], True
    for n in sizes:
        for rep in range(args.reps):
            fn, ref = _bench_case(args.op, n, rng)
            got = fn()
            exact = bool(np.array_equal(np.asarray(got), np.asarray(ref)))
            all_exact &= exact
            inner = args.inner
            t0 = time.perf_counter_ns()
            for _ in range(inner):
                fn()
            ns = (time.perf_counter_ns() - t0) / inner
            rows.append([args.op, n, args.reps, rep, ns, str(exact).lower()])
    header = ["op", "n_or_shape", "reps", "rep", "ns_per_op", "exact"]
    text = D.csv_text(header, rows)
    if args.output:
        D.ensure_parent(args.output)
        Path(args.output).write_text(text, encoding="utf-8")
        write_manifest(args.output, args, [args.output])
    else:
        sys.stdout.write(text)
    if not all_exact:
        print("kernel-bench: exactness check FAILED", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siman", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"siman {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("binarize", help="binarize one weight vector")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="file of whitespace/comma separated numbers")
    src.add_argument("--random", help="n,laplace|gauss,seed")
    b.add_argument("--mode", choices=("optimal", "half", "sign"), default="optimal")
    b.add_argument("--oracle", action="store_true", help="cross-check against brute force (n <= 16)")
    b.set_defaults(func=cmd_binarize)

    d = sub.add_parser("dist", help="optimal threshold and +1 proportion")
    d.add_argument("--kind", choices=("laplace", "gauss"), required=True)
    d.add_argument("--scale", type=float, default=1.0)
    d.add_argument("--montecarlo", help="n,seed")
    d.add_argument("--output")
    d.set_defaults(func=cmd_dist)

    t = sub.add_parser("train", help="train ConvNet-S")
    t.add_argument("--dataset", required=True, help="synth[:k=v,...] or cifar10:PATH")
    t.add_argument("--mode", choices=sorted(MODES), default="siman")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--decay-other", type=float, default=5e-4)
    t.add_argument("--decay-binarized", type=float, default=None,
                   help="override the mode's decay on binarized layers")
    t.add_argument("--augment", dest="augment", action="store_true", default=None)
    t.add_argument("--no-augment", dest="augment", action="store_false")
    t.add_argument("--train-subset", type=int, default=None)
    t.add_argument("--test-subset", type=int, default=None)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("kernel-bench", help="time packed kernels against a float oracle")
    k.add_argument("--n", default="64,1024,4096")
    k.add_argument("--reps", type=int, default=10)
    k.add_argument("--op", choices=("dot", "matvec"), default="dot")
    k.add_argument("--inner", type=int, default=20, help="calls timed per row")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--output")
    k.set_defaults(func=cmd_kernel_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"siman {args.command}: {exc}", file=sys.stderr)
        return 2
    except (AllZero, NonFiniteGradient) as exc:
        print(f"siman {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (SimanError, OSError) as exc:
        print(f"siman {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
