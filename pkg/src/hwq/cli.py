"""Command-line driver for adaptive L2-projection benchmarks."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .experiment import ExperimentConfig, SolverError, emit_csv, run_experiment_steps
from .hierarchy import dump_mesh
from .wq import preprocessing, weights_to_json

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

PRESETS = {
    "2d": dict(dim=2, degree=2, admissibility=2, theta=0.2, geometry="polar2d", beta=5e-3,
               x0=(0.0, 2.5), base_mesh=(8, 8), max_dofs=100_000, max_steps=200, repeats=5),
    "3d": dict(dim=3, degree=2, admissibility=2, theta=0.2, geometry="polar3d", beta=0.1,
               x0=(0.0, 2.5, 0.0), base_mesh=(8, 8, 8), max_dofs=200_000, max_steps=200,
               repeats=3),
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hwq",
        description="Adaptive L2 projection with weighted-quadrature or Gauss mass matrices.",
    )
    ap.add_argument("--dim", type=int, choices=(1, 2, 3))
    ap.add_argument("--degree", type=int)
    ap.add_argument("--admissibility", type=int)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--method", choices=("wq", "gauss"))
    ap.add_argument("--geometry", choices=("identity", "polar2d", "polar3d", "affine"))
    ap.add_argument("--beta", type=float)
    ap.add_argument("--x0", type=_floats, help="comma separated center, e.g. 0,2.5")
    ap.add_argument("--max-steps", type=int)
    ap.add_argument("--max-dofs", type=int)
    ap.add_argument("--base-mesh", type=_ints, help="n1[,n2[,n3]] or one value for all")
    ap.add_argument("--repeats", type=int, help="timing repetitions (median reported)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, help="CSV output path")
    ap.add_argument("--dump-mesh", type=Path, help="JSON snapshot of the final mesh")
    ap.add_argument("--dump-matrix", type=Path, help="Matrix Market file of the final matrix")
    ap.add_argument("--dump-weights", type=Path, help="JSON of the final quadrature weights")
    preset = ap.add_mutually_exclusive_group()
    preset.add_argument("--seed-paper-2d", action="store_true",
                        help="2D polar ring setup (p=2, r=2, theta=0.2, beta=5e-3)")
    preset.add_argument("--seed-paper-3d", action="store_true",
                        help="3D polar ring setup (p=2, r=2, theta=0.2, beta=0.1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Merge preset defaults and explicit flags into a validated config.

    Raises:
        ValueError: On inconsistent or invalid parameters.
    """
    params: dict = {}
    if args.seed_paper_2d:
        params.update(PRESETS["2d"])
    elif args.seed_paper_3d:
        params.update(PRESETS["3d"])
    flag_map = {
        "dim": "dim", "degree": "degree", "admissibility": "admissibility", "theta": "theta",
        "method": "method", "geometry": "geometry", "beta": "beta", "x0": "x0",
        "max_steps": "max_steps", "max_dofs": "max_dofs", "base_mesh": "base_mesh",
        "repeats": "repeats",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag)
        if val is not None:
            params[key] = val
    dim = params.get("dim", 2)
    params["dim"] = dim
    params.setdefault("geometry", {1: "identity", 2: "polar2d", 3: "polar3d"}[dim])
    params.setdefault("x0", (0.0, 2.5, 0.0)[:dim] if dim > 1 else (0.5,))
    params.setdefault("max_dofs", 200_000 if dim == 3 else 100_000)
    bm = params.get("base_mesh", (8,))
    if len(bm) == 1:
        bm = bm * dim
    params["base_mesh"] = tuple(bm)
    if args.threads < 1:
        raise ValueError("--threads must be >= 1")
    return ExperimentConfig(**params)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    import numba

    threads = min(args.threads, numba.config.NUMBA_NUM_THREADS)
    if threads != numba.config.NUMBA_NUM_THREADS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(threads)
    records, last = [], None
    try:
        for res in run_experiment_steps(cfg):
            records.append(res.record)
            last = res
            r = res.record
            print(f"step {r.step:3d}  dofs {r.dofs:8d}  elements {r.n_elements:8d}  "
                  f"error {r.l2_error:.4e}  matrix {r.t_preprocess + r.t_coeff + r.t_formation:.3f}s",
                  flush=True)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if args.out:
            emit_csv(records, args.out, cfg.metadata())
        return EXIT_SOLVER
    meta = cfg.metadata()
    if args.out:
        emit_csv(records, args.out, meta)
    if last is not None:
        if args.dump_mesh:
            dump_mesh(last.basis, args.dump_mesh)
        if args.dump_matrix:
            last.matrix.to_matrix_market(args.dump_matrix)
        if args.dump_weights:
            args.dump_weights.write_text(json.dumps(weights_to_json(preprocessing(last.basis))))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
