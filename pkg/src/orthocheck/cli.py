"""``orthocheck`` command-line tool.

Reports go to stdout as one JSON object (``"schema": 1``); tensors are read
and written as OCT1 files.  Exit codes: 0 ok, 2 I/O or format error,
3 shape/configuration error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import nullcontext

import numpy as np

from . import __version__
from .cayley import CayleyConvParams, cayley_conv
from .conv import dense_conv_matrix
from .errors import OrthoError, ShapeError
from .kernel import ConvKernel
from .lipschitz import (
    METHODS,
    build_layer,
    conv_singular_values,
    random_raw_weights,
    svcm_clip,
    verify_norm_preservation,
)
from .netcert import apply_network, certify, ledger, load_network
from .tensor_io import MAGIC, SplitMix64, read_tensor, real_dtype, write_tensor

SCHEMA = 1


def run_report(args, config: dict, metrics: dict, timings: dict | None = None, seed=None) -> dict:
    return {
        "schema": SCHEMA,
        "command": args.command,
        "argv": list(args.argv),
        "config": config,
        "metrics": metrics,
        "timings": timings or {},
        "seed": seed,
    }


def emit(report: dict) -> None:
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _norm(t) -> float:
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))


def cmd_cayley(args) -> dict:
    prec = args.precision
    w = read_tensor(args.weights).astype(real_dtype(prec))
    x = read_tensor(args.input).astype(real_dtype(prec))
    gain = args.gain if args.gain is not None else float(np.linalg.norm(w.astype(np.float64)))
    params = CayleyConvParams(w, gain=gain, n=args.n)
    t0 = time.perf_counter()
    y = cayley_conv(params, x, half=args.half)
    elapsed = time.perf_counter() - t0
    write_tensor(y, args.out)
    config = {"n": args.n, "precision": prec, "gain": gain, "half": args.half,
              "c_in": params.c_in, "c_out": params.c_out, "k": params.k}
    return run_report(args, config, {"norm_ratio": _norm(y) / _norm(x)}, {"apply": elapsed})


def cmd_verify(args) -> dict:
    t0 = time.perf_counter()
    rep = verify_norm_preservation(
        args.method, args.cin, args.cout, args.n, args.k, args.trials, args.seed,
        args.precision, inputs_per_layer=args.inputs_per_layer, svcm_iters=args.svcm_iters,
        ossn_iters=args.ossn_iters,
    )
    elapsed = time.perf_counter() - t0
    metrics = rep.metrics()
    metrics["histogram"] = rep.histogram()
    config = {"method": args.method, "c_in": args.cin, "c_out": args.cout, "n": args.n,
              "k": args.k, "trials": args.trials, "precision": args.precision,
              "inputs_per_layer": args.inputs_per_layer}
    if args.method == "svcm":
        config["svcm_iters"] = args.svcm_iters
    if args.method == "ossn":
        config["ossn_iters"] = args.ossn_iters
    return run_report(args, config, metrics, {"total": elapsed}, args.seed)


def cmd_spectrum(args):
    w = ConvKernel(read_tensor(args.weights), args.n)
    rep = conv_singular_values(w)
    sv = rep.singular_values if args.top is None else rep.singular_values[: args.top]
    lines = ["index,singular_value"] + [f"{i},{v!r}" for i, v in enumerate(sv.tolist())]
    csv = "\n".join(lines) + "\n"
    metrics = {"sigma_max": rep.sigma_max, "sigma_min": rep.sigma_min,
               "count": int(rep.singular_values.size)}
    if args.csv is None:
        sys.stdout.write(csv)
        return None
    with open(args.csv, "w") as fh:
        fh.write(csv)
    return run_report(args, {"n": args.n, "top": args.top}, metrics)


def cmd_clip(args) -> dict:
    w = ConvKernel(read_tensor(args.weights), args.n)
    t0 = time.perf_counter()
    res = svcm_clip(w, args.iters)
    elapsed = time.perf_counter() - t0
    write_tensor(res.kernel.taps, args.out)
    metrics = {f"d{args.iters}": res.deviations[-1], "deviations": res.deviations}
    return run_report(args, {"n": args.n, "iters": args.iters}, metrics, {"clip": elapsed})


def _read_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        raw = read_tensor(path).ravel()
        labels = raw.astype(np.int64)
        if not np.array_equal(labels, raw):
            raise ShapeError("labels must be integer-valued")
        return labels
    with open(path) as fh:
        return np.array([int(tok) for tok in fh.read().replace(",", " ").split()], dtype=np.int64)


def cmd_certify(args) -> dict:
    logits = read_tensor(args.logits)
    if logits.ndim == 1:
        logits = logits[None, :]
    if logits.ndim != 2:
        raise ShapeError("logits must be rank 1 or 2")
    labels = _read_labels(args.labels)
    if labels.size != logits.shape[0]:
        raise ShapeError(f"{labels.size} labels for {logits.shape[0]} examples")
    certs = [certify(row, int(t), args.lipschitz, args.eps) for row, t in zip(logits, labels)]
    flags = [c.certified for c in certs]
    metrics = {
        "threshold": certs[0].threshold if certs else float(np.sqrt(2) * args.lipschitz * args.eps),
        "margins": [c.margin for c in certs],
        "certified": flags,
        "certified_count": int(sum(flags)),
        "certified_fraction": sum(flags) / len(flags) if flags else 0.0,
    }
    return run_report(args, {"lipschitz": args.lipschitz, "eps": args.eps}, metrics)


def cmd_oracle(args) -> dict:
    w = ConvKernel(read_tensor(args.weights), args.n)
    dense = dense_conv_matrix(w)
    write_tensor(dense.matrix, args.out)
    return run_report(args, {"n": args.n}, {"rows": dense.matrix.shape[0], "cols": dense.matrix.shape[1]})


def cmd_bench(args) -> dict:
    rng = SplitMix64(args.seed)
    raw = random_raw_weights(rng, args.cout, args.cin, args.k, args.precision)
    x = rng.normal((args.batch, args.cin, args.n, args.n), args.precision)

    def once():
        layer, _ = build_layer(args.method, raw, args.n, args.precision, seed=args.seed)
        return layer(x)

    once()  # warmup
    times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        once()
        times.append(time.perf_counter() - t0)
    config = {"method": args.method, "c_in": args.cin, "c_out": args.cout, "n": args.n,
              "k": args.k, "reps": args.reps, "batch": args.batch, "precision": args.precision}
    timings = {"median": float(np.median(times)), "all": times}
    return run_report(args, config, {}, timings, args.seed)


def cmd_network(args) -> dict:
    layers, shape = load_network(args.net)
    x = read_tensor(args.input)
    y = apply_network(layers, x, args.target_lipschitz, input_shape=shape)
    led = ledger(layers, args.target_lipschitz)
    if args.out:
        write_tensor(np.asarray(y), args.out)
    metrics = {"per_layer_bounds": led.per_layer_bounds, "network_bound": led.network_bound}
    if np.ndim(y) == 1:
        metrics["logits"] = np.asarray(y, dtype=np.float64).tolist()
    return run_report(args, {"net": str(args.net), "target_lipschitz": args.target_lipschitz}, metrics)


def _add_precision(p):
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orthocheck", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS threads used by per-frequency linear algebra")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("cayley", aliases=["orthogonalize"], help="apply a Cayley orthogonal convolution")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--gain", type=float, default=None,
                   help="weight-norm gain g (default: Frobenius norm of the stored weights)")
    p.add_argument("--half", action="store_true", help="use the half-spectrum FFT path")
    _add_precision(p)
    p.set_defaults(func=cmd_cayley)

    p = add("verify", help="norm-preservation statistics on random inputs")
    p.add_argument("--method", choices=METHODS, default="cayley")
    p.add_argument("--cin", type=int, required=True)
    p.add_argument("--cout", type=int, required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inputs-per-layer", type=int, default=100)
    p.add_argument("--svcm-iters", type=int, default=50)
    p.add_argument("--ossn-iters", type=int, default=100)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.set_defaults(func=cmd_verify)

    p = add("spectrum", help="exact singular values of a convolution")
    p.add_argument("--weights", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--csv", default=None, help="write the CSV here and print a JSON report")
    p.set_defaults(func=cmd_spectrum)

    p = add("clip", help="singular value clipping with kernel truncation")
    p.add_argument("--weights", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_clip)

    p = add("certify", help="Lipschitz-margin robustness certificates")
    p.add_argument("--logits", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--lipschitz", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_certify)

    p = add("oracle", help="write the dense doubly block-circulant matrix")
    p.add_argument("--weights", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = add("bench", help="time layer construction plus one forward pass")
    p.add_argument("--method", choices=METHODS, default="cayley")
    p.add_argument("--cin", type=int, required=True)
    p.add_argument("--cout", type=int, required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_precision(p)
    p.set_defaults(func=cmd_bench)

    p = add("network", help="run a JSON-described network and report its Lipschitz ledger")
    p.add_argument("--net", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target-lipschitz", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_network)
    return parser


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        with _thread_limit(args.threads):
            report = args.func(args)
    except OrthoError as exc:
        print(f"orthocheck: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"orthocheck: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError) as exc:
        print(f"orthocheck: {exc}", file=sys.stderr)
        return 3
    if report is not None:
        emit(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
