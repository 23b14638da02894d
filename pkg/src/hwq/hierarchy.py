"""Hierarchical meshes, hierarchical B-spline bases and interaction levels.

Elements and functions of level ``l`` are addressed by multi-indices, or by
their C-order linear keys on the level-``l`` element or function grid.
Canonical orderings are by level first and key second.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _topology as topo
from .splines import KnotVector, TensorSpace, make_open_uniform_knots

DEFAULT_MAX_FUNCTIONS_PER_LEVEL = 10**12


@dataclass(frozen=True)
class SpaceHierarchy:
    """Nested tensor-product spline spaces obtained by dyadic refinement.

    Attributes:
        degree: Degree ``p`` in every direction.
        base: Level-0 element counts per direction.
        max_level: Finest level ``L``.
        max_functions_per_level: Cap on the dimension of any single level.
    """

    degree: int
    base: tuple[int, ...]
    max_level: int
    max_functions_per_level: int = DEFAULT_MAX_FUNCTIONS_PER_LEVEL

    def __post_init__(self) -> None:
        for lev in range(self.max_level + 1):
            if int(np.prod([n + self.degree for n in self.element_dims(lev)], dtype=object)) > (
                self.max_functions_per_level
            ):
                raise OverflowError(
                    f"level {lev} has more than {self.max_functions_per_level} functions"
                )

    @property
    def dim(self) -> int:
        return len(self.base)

    @property
    def n_levels(self) -> int:
        return self.max_level + 1

    def element_dims(self, level: int) -> tuple[int, ...]:
        """Per-direction element counts of ``level``."""
        return tuple(n << level for n in self.base)

    def function_dims(self, level: int) -> tuple[int, ...]:
        """Per-direction function counts of ``level``."""
        return tuple((n << level) + self.degree for n in self.base)

    def knot_vector(self, level: int, direction: int) -> KnotVector:
        return make_open_uniform_knots(self.degree, self.base[direction] << level, level=level)

    def space(self, level: int) -> TensorSpace:
        if not 0 <= level <= self.max_level:
            raise IndexError(f"level {level} outside 0..{self.max_level}")
        return TensorSpace(
            level, tuple(self.knot_vector(level, k) for k in range(self.dim))
        )

    @property
    def levels(self) -> list[TensorSpace]:
        return [self.space(lev) for lev in range(self.n_levels)]

    def extended(self, max_level: int) -> SpaceHierarchy:
        """Same hierarchy with a different number of levels."""
        return SpaceHierarchy(self.degree, self.base, max_level, self.max_functions_per_level)

    def dims_table(self, n_levels: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Element and function counts per level, padded to three directions."""
        n_levels = self.n_levels if n_levels is None else n_levels
        e = np.array([self.element_dims(lev) for lev in range(n_levels)], dtype=np.int64)
        e = e.reshape(n_levels, self.dim)
        return topo.pad3(e, 1), topo.pad3(e + self.degree, 1)

    def degrees3(self) -> np.ndarray:
        return topo.pad3(np.full((1, self.dim), self.degree), 0)[0]


def build_hierarchy(
    p: int,
    d: int,
    n0: int | Sequence[int],
    L: int,
    max_functions_per_level: int = DEFAULT_MAX_FUNCTIONS_PER_LEVEL,
) -> SpaceHierarchy:
    """Create a hierarchy of ``L + 1`` nested tensor-product spaces.

    Args:
        p: Degree, at least 1.
        d: Dimension in ``{1, 2, 3}``.
        n0: Level-0 element count, scalar or one per direction.
        L: Finest level.
        max_functions_per_level: Cap on the dimension of a single level.

    Returns:
        The hierarchy.

    Raises:
        ValueError: On invalid degree, dimension or element counts.
        OverflowError: If a level exceeds the dimension cap.
    """
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")
    base = (int(n0),) * d if np.isscalar(n0) else tuple(int(n) for n in n0)
    if len(base) != d or min(base) < 1:
        raise ValueError(f"invalid base mesh {n0!r} for dimension {d}")
    return SpaceHierarchy(p, base, L, max_functions_per_level)


def _ravel(multi: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    if multi.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(multi.T), tuple(dims)).astype(np.int64)


def _unravel(keys: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    if keys.size == 0:
        return np.zeros((0, len(dims)), dtype=np.int64)
    return np.stack(np.unravel_index(keys, tuple(dims)), axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class HierarchicalMesh:
    """Hierarchical mesh given by its active elements on every level.

    Attributes:
        base: Level-0 element counts per direction.
        active: Sorted linear keys of active elements, one array per level.
        admissibility: Admissibility class ``r`` the mesh is maintained in.
    """

    base: tuple[int, ...]
    active: tuple[np.ndarray, ...]
    admissibility: int = 2

    @classmethod
    def uniform(cls, base: Sequence[int], admissibility: int = 2) -> HierarchicalMesh:
        """Single-level mesh made of all level-0 elements."""
        n = int(np.prod(base))
        return cls(tuple(int(b) for b in base), (np.arange(n, dtype=np.int64),), admissibility)

    @property
    def dim(self) -> int:
        return len(self.base)

    @property
    def n_levels(self) -> int:
        return len(self.active)

    def element_dims(self, level: int) -> tuple[int, ...]:
        return tuple(n << level for n in self.base)

    @property
    def n_active(self) -> int:
        return int(sum(a.size for a in self.active))

    def active_multi(self, level: int) -> np.ndarray:
        """Multi-indices of active elements of ``level``."""
        if level >= self.n_levels:
            return np.zeros((0, self.dim), dtype=np.int64)
        return _unravel(self.active[level], self.element_dims(level))

    @cached_property
    def domains(self) -> tuple[np.ndarray, ...]:
        """Sorted keys of the level-``l`` elements that make up ``Omega^l``."""
        out: list[np.ndarray] = [np.zeros(0, np.int64)] * self.n_levels
        finer = np.zeros(0, dtype=np.int64)
        for lev in range(self.n_levels - 1, -1, -1):
            parents = np.zeros(0, dtype=np.int64)
            if finer.size:
                pm = _unravel(finer, self.element_dims(lev + 1)) >> 1
                parents = _ravel(pm, self.element_dims(lev))
            finer = np.union1d(self.active[lev], parents)
            out[lev] = finer
        return tuple(out)

    def refined_parents(self, level: int) -> np.ndarray:
        """Level-``level`` elements whose children all belong to ``Omega^(level+1)``."""
        if level + 1 >= self.n_levels:
            return np.zeros(0, dtype=np.int64)
        pm = _unravel(self.domains[level + 1], self.element_dims(level + 1)) >> 1
        return np.unique(_ravel(pm, self.element_dims(level)))

    @cached_property
    def element_levels(self) -> np.ndarray:
        """Level of each active element in canonical order."""
        return np.concatenate(
            [np.full(a.size, lev, dtype=np.int64) for lev, a in enumerate(self.active)]
        )

    @cached_property
    def element_multi(self) -> np.ndarray:
        """Multi-index of each active element in canonical order."""
        return np.concatenate([self.active_multi(lev) for lev in range(self.n_levels)])

    def element_ids(self) -> list[tuple[int, tuple[int, ...]]]:
        """Active elements as ``(level, multi-index)`` tuples in canonical order."""
        return [
            (int(lev), tuple(int(v) for v in m))
            for lev, m in zip(self.element_levels, self.element_multi)
        ]

    def total_measure(self) -> float:
        """Sum of the measures of all active elements."""
        n0 = float(np.prod(self.base))
        return float(sum(a.size / (n0 * 2.0 ** (self.dim * lev)) for lev, a in enumerate(self.active)))

    def check_tiling(self) -> bool:
        """True iff active elements tile the unit cube without overlap.

        Every active element is mapped onto the finest level; the resulting
        cell sets must be pairwise disjoint and cover the whole grid.
        """
        finest = self.n_levels - 1
        seen = 0
        cells = []
        for lev in range(self.n_levels):
            m = self.active_multi(lev)
            s = 1 << (finest - lev)
            lo = m * s
            cells.append(topo.expand_boxes(lo, lo + s, self.element_dims(finest))
                         if m.size else np.zeros(0, np.int64))
            seen += m.shape[0] * s**self.dim
        allc = np.concatenate(cells)
        total = int(np.prod(self.element_dims(finest)))
        return seen == total and np.unique(allc).size == total


def mesh_from_domains(
    base: Sequence[int], domains: Sequence[np.ndarray], admissibility: int = 2
) -> HierarchicalMesh:
    """Build a mesh from nested domains ``Omega^l`` given as level-``l`` element keys.

    Every domain after the first must be a union of complete children groups of
    elements of the previous domain.

    Raises:
        ValueError: If the domains are not nested or not children-complete.
    """
    base = tuple(int(b) for b in base)
    d = len(base)
    doms = [np.unique(np.asarray(x, dtype=np.int64)) for x in domains]
    while len(doms) > 1 and doms[-1].size == 0:
        doms.pop()
    n0 = int(np.prod(base))
    if doms[0].size != n0:
        raise ValueError("Omega^0 must be the whole domain")
    active = []
    for lev, dom in enumerate(doms):
        edims = tuple(n << lev for n in base)
        if lev + 1 < len(doms):
            fm = _unravel(doms[lev + 1], tuple(n << (lev + 1) for n in base))
            parents, counts = np.unique(_ravel(fm >> 1, edims), return_counts=True)
            if np.any(counts != 2**d):
                raise ValueError(f"Omega^{lev + 1} is not a union of children groups")
            if not np.all(np.isin(parents, dom)):
                raise ValueError(f"Omega^{lev + 1} is not contained in Omega^{lev}")
            active.append(np.setdiff1d(dom, parents))
        else:
            active.append(dom)
    return HierarchicalMesh(base, tuple(active), admissibility)


@dataclass(frozen=True, eq=False)
class HierarchicalBasis:
    """Active hierarchical B-spline functions of a mesh.

    Attributes:
        hierarchy: Underlying space hierarchy.
        mesh: Mesh the basis was computed from.
        active: Sorted linear keys of active functions per level.
    """

    hierarchy: SpaceHierarchy
    mesh: HierarchicalMesh
    active: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.hierarchy.dim

    @property
    def degree(self) -> int:
        return self.hierarchy.degree

    @property
    def n_levels(self) -> int:
        return len(self.active)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Global index of the first function of each level (length ``n_levels + 1``)."""
        return np.concatenate([[0], np.cumsum([a.size for a in self.active])]).astype(np.int64)

    @property
    def size(self) -> int:
        """Number of active functions ``N_H``."""
        return int(self.offsets[-1])

    def active_multi(self, level: int) -> np.ndarray:
        if level >= self.n_levels:
            return np.zeros((0, self.dim), dtype=np.int64)
        return _unravel(self.active[level], self.hierarchy.function_dims(level))

    @cached_property
    def levels(self) -> np.ndarray:
        """Level of each function in global order."""
        return np.concatenate(
            [np.full(a.size, lev, dtype=np.int64) for lev, a in enumerate(self.active)]
        )

    @cached_property
    def multi(self) -> np.ndarray:
        """Multi-index of each function in global order."""
        return np.concatenate([self.active_multi(lev) for lev in range(self.n_levels)])

    @cached_property
    def keys(self) -> np.ndarray:
        """Concatenated sorted keys (global order)."""
        return np.concatenate(self.active).astype(np.int64)

    def identifiers(self) -> list[tuple[int, tuple[int, ...]]]:
        """All identifiers ``(level, multi-index)`` in global order."""
        return [
            (int(lev), tuple(int(v) for v in m)) for lev, m in zip(self.levels, self.multi)
        ]

    def index_of(self, level: int, multi: Sequence[int]) -> int:
        """Global index of an identifier, or ``-1`` if it is not active."""
        if not 0 <= level < self.n_levels:
            return -1
        m = np.asarray(multi, dtype=np.int64)
        dims = self.hierarchy.function_dims(level)
        if m.shape != (len(dims),) or np.any(m < 0) or np.any(m >= np.asarray(dims)):
            return -1
        key = _ravel(m[None, :], dims)[0]
        arr = self.active[level]
        pos = int(np.searchsorted(arr, key))
        if pos < arr.size and arr[pos] == key:
            return int(self.offsets[level] + pos)
        return -1

    def topology_arrays(self) -> dict[str, np.ndarray]:
        """Padded arrays consumed by the compiled topology kernels."""
        edims, fdims = self.hierarchy.dims_table(self.n_levels)
        return {
            "degs": self.hierarchy.degrees3(),
            "edims": edims,
            "fdims": fdims,
            "fkeys": self.keys,
            "foff": self.offsets,
            "flev": self.levels,
            "fmulti": topo.pad3(self.multi, 0),
        }


def _functions_inside(elem_keys: np.ndarray, level: int, h: SpaceHierarchy) -> np.ndarray:
    """Keys of level-``level`` functions whose support lies inside the element set."""
    if elem_keys.size == 0:
        return np.zeros(0, dtype=np.int64)
    p, d = h.degree, h.dim
    edims = h.element_dims(level)
    fdims = h.function_dims(level)
    em = _unravel(elem_keys, edims)
    offs = np.array(list(itertools.product(range(p + 1), repeat=d)), dtype=np.int64)
    cand = (em[:, None, :] + offs[None, :, :]).reshape(-1, d)
    keys, counts = np.unique(_ravel(cand, fdims), return_counts=True)
    fm = _unravel(keys, fdims)
    ne = np.asarray(edims)[None, :]
    size = np.prod(np.minimum(ne - 1, fm) - np.maximum(0, fm - p) + 1, axis=1)
    return keys[counts == size]


def compute_active_basis(mesh: HierarchicalMesh, hierarchy: SpaceHierarchy) -> HierarchicalBasis:
    """Select the functions with support in ``Omega^l`` but not in ``Omega^(l+1)``.

    Raises:
        ValueError: If the mesh has more levels than the hierarchy or a
            different base mesh.
    """
    if mesh.base != hierarchy.base:
        raise ValueError("mesh and hierarchy have different base meshes")
    if mesh.n_levels > hierarchy.n_levels:
        raise ValueError("mesh has more levels than the hierarchy")
    active = []
    for lev in range(mesh.n_levels):
        inside = _functions_inside(mesh.domains[lev], lev, hierarchy)
        covered = _functions_inside(mesh.refined_parents(lev), lev, hierarchy)
        active.append(np.setdiff1d(inside, covered))
    return HierarchicalBasis(hierarchy, mesh, tuple(active))


@dataclass(frozen=True, eq=False)
class ElementIncidence:
    """Active functions nonzero on each active element (CSR layout).

    Attributes:
        ptr: Row pointer over active elements in canonical order.
        gid: Global function ids.
        loc: Offset of the function index relative to the ancestor element index
            on the function's level, per direction (padded to 3).
    """

    ptr: np.ndarray
    gid: np.ndarray
    loc: np.ndarray


def element_incidence(basis: HierarchicalBasis) -> ElementIncidence:
    """Compute, for every active element, the active functions nonzero on it."""
    mesh = basis.mesh
    t = basis.topology_arrays()
    elev = mesh.element_levels
    emulti = topo.pad3(mesh.element_multi, 0)
    ne = elev.size
    ptr = np.zeros(ne + 1, dtype=np.int64)
    dummy_i = np.zeros(0, dtype=np.int64)
    dummy_l = np.zeros((0, 3), dtype=np.int64)
    topo.element_incidence_kernel(elev, emulti, t["degs"], t["fdims"], t["fkeys"], t["foff"],
                                  False, ptr, dummy_i, dummy_l)
    gid = np.empty(ptr[-1], dtype=np.int64)
    loc = np.empty((ptr[-1], 3), dtype=np.int64)
    topo.element_incidence_kernel(elev, emulti, t["degs"], t["fdims"], t["fkeys"], t["foff"],
                                  True, ptr, gid, loc)
    return ElementIncidence(ptr, gid, loc)


@dataclass(frozen=True, eq=False)
class LevelBounds:
    """Level ranges derived from the element incidence.

    Attributes:
        element_min: Lowest level of functions nonzero on each active element.
        element_max: Highest level of functions nonzero on each active element.
        nu: Interaction level of every function.
        mu: Lowest level of any active function overlapping each function.
    """

    element_min: np.ndarray
    element_max: np.ndarray
    nu: np.ndarray
    mu: np.ndarray


def level_bounds(basis: HierarchicalBasis, incidence: ElementIncidence | None = None) -> LevelBounds:
    """Interaction levels and per-element level ranges.

    Two functions overlap on a set of positive measure exactly when they are
    both nonzero on a common active element, so the interaction level of a
    function is the highest function level found on the elements in its support.
    """
    inc = element_incidence(basis) if incidence is None else incidence
    ne = basis.mesh.n_active
    emin = np.empty(ne, dtype=np.int64)
    emax = np.empty(ne, dtype=np.int64)
    nu = np.empty(basis.size, dtype=np.int64)
    mu = np.empty(basis.size, dtype=np.int64)
    topo.level_bounds_kernel(basis.mesh.element_levels, inc.ptr, inc.gid, basis.levels,
                             basis.size, emin, emax, mu, nu)
    return LevelBounds(emin, emax, nu, mu)


def interaction_level(basis: HierarchicalBasis, ident: tuple[int, Sequence[int]]) -> int:
    """Finest level of any active function overlapping the given one.

    Raises:
        KeyError: If the identifier is not active.
    """
    g = basis.index_of(ident[0], ident[1])
    if g < 0:
        raise KeyError(f"{ident} is not an active function")
    return int(level_bounds(basis).nu[g])


@dataclass(frozen=True, eq=False)
class Classification:
    """Partition of the active functions by interaction level.

    Attributes:
        nu: Interaction level of every function in global order.
        sets: ``sets[n]`` holds the global ids of ``F^n`` (sorted).
        mu: Lowest level of any active function overlapping each function.
    """

    nu: np.ndarray
    sets: tuple[np.ndarray, ...]
    mu: np.ndarray

    def levels_present(self) -> list[int]:
        return [n for n, s in enumerate(self.sets) if s.size]


def classify_basis_functions(basis: HierarchicalBasis) -> Classification:
    """Group functions into ``F^n = {(l, i) : nu(l, i) = n}``."""
    bounds = level_bounds(basis)
    nu = bounds.nu
    sets = tuple(np.flatnonzero(nu == n).astype(np.int64) for n in range(basis.n_levels))
    return Classification(nu, sets, bounds.mu)


def check_admissibility(mesh: HierarchicalMesh, basis: HierarchicalBasis, r: int) -> bool:
    """True iff the functions nonzero on each active element span at most ``r`` levels."""
    if basis.mesh is not mesh and basis.mesh.n_active != mesh.n_active:
        raise ValueError("basis was not computed from this mesh")
    b = level_bounds(basis)
    return bool(np.all(b.element_max - b.element_min <= r - 1))


def dorfler_mark(indicators: np.ndarray, theta: float) -> np.ndarray:
    """Minimal set of elements carrying a ``theta**2`` share of the squared indicators.

    Elements are taken greedily by decreasing indicator; ties keep the
    canonical (level, lexicographic) element order.

    Args:
        indicators: Nonnegative per-element indicators in canonical order.
        theta: Marking parameter in ``(0, 1]``.

    Returns:
        Sorted positions of the marked elements (empty if all indicators vanish).

    Raises:
        ValueError: If ``theta`` is outside ``(0, 1]`` or indicators are negative.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    eta = np.asarray(indicators, dtype=np.float64)
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be finite and nonnegative")
    sq = eta**2
    total = sq.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-eta, kind="stable")
    csum = np.cumsum(sq[order])
    # tolerate the rounding difference between the cumulative and the total sum
    target = theta**2 * total * (1.0 - 1e-12)
    k = int(np.searchsorted(csum, target, side="left")) + 1
    k = min(k, order.size)
    chosen = order[:k]
    return np.sort(chosen[sq[chosen] > 0])


@dataclass
class _RefineState:
    base: tuple[int, ...]
    p: int
    r: int
    max_level: int
    active: list[set[int]] = field(default_factory=list)

    def edims(self, lev: int) -> tuple[int, ...]:
        return tuple(n << lev for n in self.base)

    def key(self, lev: int, m: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in m), self.edims(lev)))

    def multi(self, lev: int, key: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(key, self.edims(lev)))

    def neighbours(self, lev: int, m: tuple[int, ...]) -> list[tuple[int, int]]:
        """Active coarse elements touching the support extension of element ``m``."""
        k = lev - self.r + 1
        if k < 0:
            return []
        ext_lo, ext_hi = [], []
        for a, n in zip(m, self.edims(k)):
            anc = a >> (lev - k)
            ext_lo.append(max(anc - self.p, 0))
            ext_hi.append(min(anc + self.p, n - 1))
        found = []
        for j in range(0, k + 1):
            s = 1 << (k - j)
            ranges = []
            for lo, hi, n in zip(ext_lo, ext_hi, self.edims(j)):
                # closed level-j cells [a s, (a+1) s] touching [lo, hi+1]
                a0 = max(-(-lo // s) - 1, 0)
                a1 = min((hi + 1) // s, n - 1)
                ranges.append(range(a0, a1 + 1))
            for cell in itertools.product(*ranges):
                key = self.key(j, cell)
                if key in self.active[j]:
                    found.append((j, key))
        return found

    def refine(self, lev: int, key: int) -> None:
        if key not in self.active[lev]:
            return
        if lev + 1 > self.max_level:
            raise ValueError(
                f"refining a level-{lev} element needs level {lev + 1}, "
                f"but the hierarchy stops at level {self.max_level}; extend it first"
            )
        m = self.multi(lev, key)
        while True:
            found = self.neighbours(lev, m)
            if not found:
                break
            for j, k in found:
                self.refine(j, k)
        self.active[lev].discard(key)
        while len(self.active) <= lev + 1:
            self.active.append(set())
        cdims = self.edims(lev + 1)
        for off in itertools.product((0, 1), repeat=len(m)):
            child = tuple(2 * a + o for a, o in zip(m, off))
            self.active[lev + 1].add(int(np.ravel_multi_index(child, cdims)))


def admissible_refine(
    mesh: HierarchicalMesh,
    marked: Iterable[tuple[int, Sequence[int]]],
    r: int,
    hierarchy: SpaceHierarchy,
) -> HierarchicalMesh:
    """Refine marked elements and enough neighbours to keep class-``r`` admissibility.

    Each marked level-``l`` element is split into its ``2**d`` children. Before
    that, every active element of level at most ``l - r + 1`` touching the
    union of supports of the level-``(l - r + 1)`` functions nonzero on the
    marked element is refined recursively, so that none of those functions
    stays active next to the new level-``(l + 1)`` children.

    Args:
        mesh: Current mesh.
        marked: Active elements as ``(level, multi-index)`` pairs.
        r: Admissibility class, at least 2.
        hierarchy: Space hierarchy bounding the admissible levels.

    Returns:
        The refined mesh.

    Raises:
        ValueError: If ``r < 2``, a marked element is not active, or
            refinement would exceed the finest level of ``hierarchy``.
    """
    if r < 2:
        raise ValueError(f"admissibility class must be >= 2, got {r}")
    state = _RefineState(mesh.base, hierarchy.degree, r, hierarchy.max_level,
                         [set(a.tolist()) for a in mesh.active])
    todo = []
    for lev, m in marked:
        lev = int(lev)
        key = state.key(lev, m) if lev < len(state.active) else -1
        if key < 0 or key not in state.active[lev]:
            raise ValueError(f"element {(lev, tuple(m))} is not active")
        todo.append((lev, key))
    for lev, key in todo:
        state.refine(lev, key)
    while len(state.active) > 1 and not state.active[-1]:
        state.active.pop()
    active = tuple(np.array(sorted(s), dtype=np.int64) for s in state.active)
    return HierarchicalMesh(mesh.base, active, r)


def mesh_to_json(basis: HierarchicalBasis) -> dict:
    """Serializable snapshot of a mesh and its active functions.

    Active elements are written as index boxes, merging runs of consecutive
    elements along the last direction. All indices are 1-based and boxes are
    inclusive.
    """
    mesh = basis.mesh
    levels = []
    for lev in range(max(mesh.n_levels, basis.n_levels)):
        m = mesh.active_multi(lev)
        boxes = []
        i = 0
        while i < m.shape[0]:
            j = i
            while (
                j + 1 < m.shape[0]
                and np.array_equal(m[j + 1, :-1], m[i, :-1])
                and m[j + 1, -1] == m[j, -1] + 1
            ):
                j += 1
            boxes.append([(m[i] + 1).tolist(), (m[j] + 1).tolist()])
            i = j + 1
        levels.append(
            {
                "level": lev,
                "active_element_boxes": boxes,
                "active_functions": (basis.active_multi(lev) + 1).tolist(),
            }
        )
    return {
        "format": "hwq-mesh",
        "version": 1,
        "dim": mesh.dim,
        "degree": basis.degree,
        "base_elements": list(mesh.base),
        "admissibility": mesh.admissibility,
        "levels": levels,
    }


def dump_mesh(basis: HierarchicalBasis, path: str | Path) -> None:
    """Write :func:`mesh_to_json` to ``path``."""
    Path(path).write_text(json.dumps(mesh_to_json(basis)))


def mesh_from_json(doc: dict) -> HierarchicalMesh:
    """Rebuild a mesh from a snapshot produced by :func:`mesh_to_json`."""
    base = tuple(doc["base_elements"])
    active = []
    for entry in doc["levels"]:
        lev = entry["level"]
        edims = tuple(n << lev for n in base)
        boxes = entry["active_element_boxes"]
        if boxes:
            lo = np.array([b[0] for b in boxes], dtype=np.int64) - 1
            hi = np.array([b[1] for b in boxes], dtype=np.int64)
            active.append(topo.expand_boxes(lo, hi, edims))
        else:
            active.append(np.zeros(0, dtype=np.int64))
    return HierarchicalMesh(base, tuple(active), doc.get("admissibility", 2))
