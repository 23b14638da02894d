"""Adaptive L2-projection experiments with timing and counters."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssemblyStats, SparseMatrix, compute_matrix
from .gauss import GaussStats, assemble_mass_gauss, assemble_rhs, l2_error_indicators
from .geometry import GeometryMap, make_geometry
from .hierarchy import (
    HierarchicalBasis,
    HierarchicalMesh,
    admissible_refine,
    build_hierarchy,
    compute_active_basis,
    dorfler_mark,
    element_incidence,
)
from .wq import preprocessing

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step",
    "dofs",
    "n_elements",
    "l2_error",
    "t_preprocess",
    "t_coeff",
    "t_formation",
    "t_rhs",
    "t_solve",
    "flops",
    "quad_evals",
)


class SolverError(RuntimeError):
    """The linear solver did not reach the requested residual."""


def target_function(x: np.ndarray, beta: float, x0: np.ndarray) -> np.ndarray:
    """Gaussian ring ``exp(-((|x - x0| - 1) / beta)**2)`` at physical points ``x`` of shape ``(M, d)``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist = np.linalg.norm(x - np.asarray(x0, dtype=np.float64), axis=1)
    return np.exp(-(((dist - 1.0) / beta) ** 2))


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one adaptive run.

    Attributes:
        dim: Dimension.
        degree: Spline degree.
        admissibility: Admissibility class ``r``.
        theta: Marking parameter of the Dörfler strategy.
        max_steps: Largest refinement step index that is solved.
        max_dofs: Stop once the space has at least this many functions.
        beta: Width of the target ring.
        x0: Center of the target ring.
        method: ``wq`` or ``gauss`` for the mass matrix.
        geometry: Geometry kind.
        base_mesh: Level-0 element counts.
        repeats: Timing repetitions per step; the median is reported.
        tol: Stop once the L2 error is at most this value.
        target: Optional replacement for the ring function (physical points to values).
    """

    dim: int = 2
    degree: int = 2
    admissibility: int = 2
    theta: float = 0.2
    max_steps: int = 10
    max_dofs: int = 100_000
    beta: float = 5e-3
    x0: tuple[float, ...] = (0.0, 2.5)
    method: str = "wq"
    geometry: str = "polar2d"
    base_mesh: tuple[int, ...] = (8, 8)
    repeats: int = 3
    tol: float = 1e-10
    target: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.admissibility < 2:
            raise ValueError(f"admissibility must be >= 2, got {self.admissibility}")
        if self.method not in ("wq", "gauss"):
            raise ValueError(f"unknown method {self.method!r}")
        if len(self.x0) != self.dim:
            raise ValueError(f"x0 needs {self.dim} coordinates, got {len(self.x0)}")
        if len(self.base_mesh) != self.dim or min(self.base_mesh) < 1:
            raise ValueError(f"invalid base mesh {self.base_mesh}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.repeats < 1 or self.max_steps < 0 or self.max_dofs < 1:
            raise ValueError("repeats, max_steps and max_dofs must be positive")
        make_geometry(self.geometry, self.dim)

    def function(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.target is not None:
            return self.target
        x0 = np.asarray(self.x0)
        return lambda x: target_function(x, self.beta, x0)

    def metadata(self) -> dict:
        meta = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "target"}
        meta["x0"] = list(self.x0)
        meta["base_mesh"] = list(self.base_mesh)
        meta["target"] = "ring" if self.target is None else "custom"
        meta["timing_statistic"] = "median"
        meta["solver"] = "gmres+jacobi, rtol 1e-12, cap 10N"
        meta["rhs"] = "element gauss, p+1 points"
        return meta


@dataclass(frozen=True)
class ExperimentRecord:
    """Measurements of one refinement step."""

    step: int
    dofs: int
    n_elements: int
    l2_error: float
    t_preprocess: float
    t_coeff: float
    t_formation: float
    t_rhs: float
    t_solve: float
    flops: int
    quad_evals: int


@dataclass
class StepResult:
    """Full state of one step, kept for dumps and tests."""

    basis: HierarchicalBasis
    matrix: SparseMatrix
    rhs: np.ndarray
    solution: np.ndarray
    indicators: np.ndarray
    record: ExperimentRecord


def solve_projection(matrix: SparseMatrix, rhs: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve ``M u = b`` with Jacobi-preconditioned GMRES.

    Raises:
        SolverError: If ``||M u - b|| > rtol ||b||`` after ``10 N`` iterations.
    """
    a = matrix.csr
    n = a.shape[0]
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n)
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise SolverError("nonpositive diagonal entry")
    pre = sp.diags(1.0 / diag)
    restart = min(n, 100)
    budget = 10 * n
    x = np.zeros(n)
    used = 0
    while used < budget:
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        outer = max(1, math.ceil((budget - used) / restart))
        x, _ = spla.gmres(a, rhs, x0=x, M=pre, rtol=rtol * 0.1, atol=0.0, restart=restart,
                          maxiter=outer, callback=count, callback_type="pr_norm")
        used += max(iters, 1)
        res = float(np.linalg.norm(a @ x - rhs))
        if res <= rtol * bnorm:
            return x
    raise SolverError(
        f"GMRES stopped after {used} iterations with relative residual "
        f"{np.linalg.norm(a @ x - rhs) / bnorm:.3e}"
    )


def _median_time(fn: Callable[[], object], repeats: int) -> tuple[float, object]:
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _assemble(basis: HierarchicalBasis, geo: GeometryMap, method: str, repeats: int):
    """Assemble the mass matrix ``repeats`` times; report median phase times."""
    pre, coeff, form = [], [], []
    matrix, counters = None, (0, 0)
    for _ in range(repeats):
        if method == "wq":
            t0 = time.perf_counter()
            data = preprocessing(basis)
            pre.append(time.perf_counter() - t0)
            st = AssemblyStats()
            matrix = compute_matrix(basis, data, geo, st)
            coeff.append(st.t_coeff)
            form.append(st.t_formation)
            counters = (st.flops, st.quad_evals)
        else:
            gs = GaussStats()
            matrix = assemble_mass_gauss(basis, geo, gs)
            pre.append(0.0)
            coeff.append(0.0)
            form.append(gs.t_formation)
            counters = (gs.flops, gs.quad_evals)
    med = statistics.median
    return matrix, med(pre), med(coeff), med(form), counters


def warm_up() -> None:
    """Compile every kernel once on a tiny problem so timings exclude compilation."""
    for d in (1, 2, 3):
        h = build_hierarchy(2, d, 4, 2)
        mesh = HierarchicalMesh.uniform(h.base)
        mesh = admissible_refine(mesh, [(0, (1,) * d)], 2, h)
        basis = compute_active_basis(mesh, h)
        geo = make_geometry("identity", d)
        f = lambda x: np.ones(x.shape[0])  # noqa: E731
        compute_matrix(basis, preprocessing(basis), geo)
        assemble_mass_gauss(basis, geo)
        assemble_rhs(basis, geo, f)
        l2_error_indicators(basis, geo, np.zeros(basis.size), f)


def run_experiment_steps(cfg: ExperimentConfig, warm: bool = True):
    """Adaptive loop yielding a :class:`StepResult` per step.

    Raises:
        SolverError: If a projection cannot be solved to the requested residual.
    """
    if warm:
        warm_up()
    geo = make_geometry(cfg.geometry, cfg.dim)
    f = cfg.function()
    hierarchy = build_hierarchy(cfg.degree, cfg.dim, cfg.base_mesh, 1)
    mesh = HierarchicalMesh.uniform(hierarchy.base, cfg.admissibility)
    step = 0
    while True:
        if mesh.n_levels > hierarchy.n_levels:
            hierarchy = hierarchy.extended(mesh.n_levels - 1)
        basis = compute_active_basis(mesh, hierarchy)
        matrix, t_pre, t_coeff, t_form, (flops, qevals) = _assemble(
            basis, geo, cfg.method, cfg.repeats
        )
        inc = element_incidence(basis)
        t_rhs, rhs = _median_time(lambda: assemble_rhs(basis, geo, f, inc), cfg.repeats)
        t_solve, u = _median_time(lambda: solve_projection(matrix, rhs), 1)
        eta = l2_error_indicators(basis, geo, u, f, inc)
        err = float(np.sqrt(np.sum(eta**2)))
        rec = ExperimentRecord(step, basis.size, mesh.n_active, err, t_pre, t_coeff, t_form,
                               t_rhs, t_solve, int(flops), int(qevals))
        log.info("step %d: N=%d elements=%d error=%.3e", step, basis.size, mesh.n_active, err)
        yield StepResult(basis, matrix, rhs, u, eta, rec)
        if step >= cfg.max_steps or basis.size >= cfg.max_dofs or err <= cfg.tol:
            return
        marked_pos = dorfler_mark(eta, cfg.theta)
        if marked_pos.size == 0:
            return
        levels = mesh.element_levels[marked_pos]
        top = int(levels.max()) + 1
        if top > hierarchy.max_level:
            hierarchy = hierarchy.extended(top)
        marked = [(int(mesh.element_levels[i]), tuple(int(v) for v in mesh.element_multi[i]))
                  for i in marked_pos]
        mesh = admissible_refine(mesh, marked, cfg.admissibility, hierarchy)
        step += 1


def run_experiment(cfg: ExperimentConfig, warm: bool = True) -> list[ExperimentRecord]:
    """Run the adaptive projection loop and return one record per step."""
    return [s.record for s in run_experiment_steps(cfg, warm)]


def emit_csv(records: list[ExperimentRecord], path: str | Path,
             metadata: dict | None = None) -> None:
    """Write records as CSV with a header; metadata goes to ``<path>.meta.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            row = asdict(r)
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in CSV_COLUMNS])
    if metadata is not None:
        Path(str(path) + ".meta.json").write_text(json.dumps(metadata, indent=2))


def read_csv(path: str | Path) -> list[ExperimentRecord]:
    """Parse a file written by :func:`emit_csv`."""
    types = {f.name: f.type for f in fields(ExperimentRecord)}
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: (int(v) if types[k] in ("int", int) else float(v)) for k, v in row.items()}
            out.append(ExperimentRecord(**vals))
    return out
