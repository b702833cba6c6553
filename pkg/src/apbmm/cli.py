"""``apbmm`` command line: verify, bench, tpp, apb-stats, pack, shapes.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .apb import apb_forward, decompose_apb, init_alpha_delta, ApbParams, save_layer
from .io import TensorFormatError, load_tensor, store_planes, store_tensor
from .kernels import GemmProblem
from .tensors import DEFAULT_LANE_BITS, pack_signs
from .transform import decompose_thm, quantize_uniform_2bit

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def load_matrix(path) -> np.ndarray:
    """Dense matrix from a ``.npy`` file or a dense BTSR container."""
    path = Path(path)
    if path.suffix == ".npy":
        m = np.load(path, allow_pickle=False)
    else:
        m = load_tensor(path)
    if not isinstance(m, np.ndarray):
        raise TensorFormatError(f"{path} does not hold a dense matrix")
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise TensorFormatError(f"{path} holds a {m.ndim}-D array, expected 2-D")
    return m.astype(np.float32)


def _cmd_verify(args) -> int:
    report = bench.run_verify(seed=args.seed, inject_fault=args.inject_fault)
    print(report.text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def _problems(args) -> list[GemmProblem]:
    if args.square:
        return [GemmProblem(n, n, n) for n in bench.parse_square(args.square)]
    if None in (args.m, args.k, args.n):
        raise UsageError("bench needs --square or all of --m/--k/--n")
    return [GemmProblem(args.m, args.k, args.n)]


def _cmd_bench(args) -> int:
    routines = [r.strip() for r in args.routine.split(",") if r.strip()]
    unknown = [r for r in routines if r not in bench.ROUTINES]
    if unknown or not routines:
        raise UsageError(f"unknown routine(s) {unknown}; choose from {', '.join(bench.ROUTINES)}")
    if args.clock_ghz is not None and not args.clock_ghz > 0:
        raise UsageError("--clock-ghz must be positive")
    records = []
    for prob in _problems(args):
        for routine in routines:
            records.append(bench.run_bench(routine, prob, args.reps, args.warmup,
                                           args.threads, args.clock_ghz, args.seed))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            bench.write_csv(records, f)
    else:
        bench.write_csv(records, sys.stdout)
    return EXIT_OK


def _cmd_tpp(args) -> int:
    if not args.clock_ghz > 0:
        raise UsageError("--clock-ghz must be positive")
    print(bench.format_tpp(args.clock_ghz))
    return EXIT_OK


def _cmd_apb_stats(args) -> int:
    w = load_matrix(args.weights)
    stats = bench.apb_stats(w, args.alpha, args.delta, args.b_v, args.dims or None)
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def _cmd_pack(args) -> int:
    m = load_matrix(args.input)
    out = args.output
    if args.to == "dense":
        store_tensor(out, m)
    elif args.to == "bits":
        store_tensor(out, pack_signs(m, args.lane_bits))
    elif args.to == "planes":
        if args.scale is None:
            raise UsageError("--to planes needs --scale")
        store_planes(out, decompose_thm(quantize_uniform_2bit(m, args.scale), lane_bits=args.lane_bits))
    else:
        p = init_alpha_delta(m)
        if args.alpha is not None or args.delta is not None:
            p = ApbParams.clamped(p.alpha if args.alpha is None else args.alpha,
                                  p.delta if args.delta is None else args.delta)
        save_layer(out, decompose_apb(apb_forward(m, p), p.alpha, args.lane_bits))
    print(f"wrote {args.to} tensor {m.shape[0]}x{m.shape[1]} to {out}")
    return EXIT_OK


def _cmd_shapes(args) -> int:
    if args.preset == "resnet18":
        rows = [(f"conv{i}", p) for i, p in enumerate(bench.resnet18_shapes())]
    else:
        needed = (args.c_in, args.c_out, args.hw)
        if None in needed:
            raise UsageError("shapes needs --c-in, --c-out and --hw (or --preset)")
        p = bench.im2col_shape(args.c_in, args.c_out, args.kernel, args.kernel,
                               args.hw, args.hw, args.stride, args.pad)
        rows = [("conv", p)]
    print(f"{'layer':<8}{'M':>8}{'K':>8}{'N':>8}")
    for name, p in rows:
        print(f"{name:<8}{p.M:>8}{p.K:>8}{p.N:>8}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apbmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run exhaustive and randomized oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=bench.GEMM_ROUTINES,
                   help="flip one output bit of this routine (tests the failure path)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench", help="time routines and write CSV")
    p.add_argument("--routine", default="1x1,1x2,2x2",
                   help=f"comma-separated subset of {','.join(bench.ROUTINES)}")
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--square", help="square sweep LO..HI[:STEP] (doubling without STEP)")
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clock-ghz", type=float, help="machine clock for %%-of-peak")
    p.add_argument("--csv", help="write CSV here instead of stdout")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("tpp", help="print the theoretical peak table")
    p.add_argument("--clock-ghz", type=float, default=1.0)
    p.set_defaults(func=_cmd_tpp)

    p = sub.add_parser("apb-stats", help="APB compression statistics of a weight matrix")
    p.add_argument("weights", help=".npy or dense .btsr file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--b-v", type=int, default=32)
    p.add_argument("--dims", type=int, nargs="*", help="layer dimensions for position bits")
    p.set_defaults(func=_cmd_apb_stats)

    p = sub.add_parser("pack", help="convert a dense matrix to a BTSR container")
    p.add_argument("input", help=".npy or dense .btsr file")
    p.add_argument("output", help="output file (dense, bits) or path prefix (planes, apb)")
    p.add_argument("--to", choices=("dense", "bits", "planes", "apb"), default="bits")
    p.add_argument("--scale", type=float, help="2-bit quantization step for --to planes")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--lane-bits", type=int, default=DEFAULT_LANE_BITS)
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("shapes", help="im2col GEMM shapes of convolutions")
    p.add_argument("--c-in", type=int)
    p.add_argument("--c-out", type=int)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--hw", type=int, help="input height = width")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pad", type=int, default=0)
    p.add_argument("--preset", choices=("resnet18",))
    p.set_defaults(func=_cmd_shapes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (OSError, TensorFormatError) as exc:
        print(f"apbmm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"apbmm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
