"""Generalised Sierpinski carpets: generator checks, pre-carpet graphs, resistance scaling.

Everything here is floating point; exact arithmetic stays with the p.c.f. code.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .harmonic import ConvergenceError
from .structure import StructureError

__all__ = [
    "CarpetGenerator",
    "PreCarpetGraph",
    "ResistanceScaling",
    "DimensionReport",
    "CARPET_PRESETS",
    "carpet_preset",
    "carpet_from_config",
    "check_symmetry",
    "check_connectedness",
    "check_nondiagonality",
    "check_nondiagonality_rectangles",
    "check_borders",
    "check_all",
    "build_pre_carpet",
    "x1_faces",
    "effective_resistance",
    "resistance_scaling",
    "dimension_report",
    "DEFAULT_VERTEX_CAP",
]

DEFAULT_VERTEX_CAP = 2_000_000
CAVEAT = ("r is estimated from unit-conductance pre-carpet graphs; it approximates the scaling "
          "factor of the limiting resistance form without a quantified error bound")


@dataclass(frozen=True)
class CarpetGenerator:
    """Cells kept from the ``l**D`` grid; cell ``i`` is the ``i``-th in lexicographic order."""

    D: int
    l: int
    cells: tuple[tuple[int, ...], ...]
    name: str = "carpet"

    def __post_init__(self):
        if self.D < 2 or self.l < 3:
            raise StructureError("carpets need D >= 2 and l >= 3")
        cells = tuple(sorted({tuple(int(x) for x in c) for c in self.cells}))
        for c in cells:
            if len(c) != self.D or any(not 0 <= x < self.l for x in c):
                raise StructureError(f"cell {c} is outside the {self.l}^{self.D} grid")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def create(cls, D: int, l: int, cells, name: str = "carpet", allow_full: bool = False):
        g = cls(D, l, tuple(map(tuple, cells)), name)
        if g.M < 2:
            raise StructureError("a carpet generator needs at least two cells")
        if g.M >= l ** D and not allow_full:
            raise StructureError("a carpet generator must omit at least one cell")
        return g

    @property
    def M(self) -> int:
        return len(self.cells)

    @property
    def n_symbols(self) -> int:
        return self.M

    @cached_property
    def array(self) -> np.ndarray:
        return np.array(self.cells, dtype=np.int64).reshape(-1, self.D)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.l,) * self.D, dtype=bool)
        m[tuple(self.array.T)] = True
        return m

    def level_coordinates(self, n: int) -> np.ndarray:
        """Integer corner coordinates of the level-n cells in word order, on the ``l**n`` grid."""
        coords = np.zeros((1, self.D), dtype=np.int64)
        for _ in range(n):
            coords = (coords[:, None, :] * self.l + self.array[None, :, :]).reshape(-1, self.D)
        return coords

    def cell_adjacency(self, m: int) -> list[set[int]]:
        """Level-m cells sharing at least a point with each cell (itself included)."""
        coords = self.level_coordinates(m)
        lookup = _Lookup(coords, self.l ** m)
        adj = [set() for _ in range(len(coords))]
        for off in itertools.product((-1, 0, 1), repeat=self.D):
            idx, src = lookup.shifted(np.array(off))
            for a, b in zip(src.tolist(), idx.tolist()):
                adj[a].add(b)
        return adj


class _Lookup:
    """Dense grid -> cell index table for face/point neighbour queries."""

    def __init__(self, coords: np.ndarray, side: int):
        self.coords, self.side = coords, side
        self.D = coords.shape[1]
        self.table = np.full(side ** self.D, -1, dtype=np.int64)
        self.table[self._flat(coords)] = np.arange(len(coords))

    def _flat(self, c):
        return np.ravel_multi_index(tuple(c.T), (self.side,) * self.D)

    def shifted(self, off):
        """``(neighbour index, source index)`` for cells whose shift by ``off`` is a cell."""
        c = self.coords + off
        ok = np.all((c >= 0) & (c < self.side), axis=1)
        src = np.nonzero(ok)[0]
        nb = self.table[self._flat(c[ok])]
        keep = nb >= 0
        return nb[keep], src[keep]


# -- presets ------------------------------------------------------------------------

def _menger(D: int) -> list[tuple[int, ...]]:
    # drop cells with at least two coordinates equal to the centre
    return [c for c in itertools.product(range(3), repeat=D) if sum(x == 1 for x in c) < 2]


CARPET_PRESETS = {
    "carpet2d": lambda: CarpetGenerator.create(2, 3, _menger(2), "carpet2d"),
    "carpet3d": lambda: CarpetGenerator.create(3, 3, _menger(3), "carpet3d"),
}


def carpet_preset(name: str) -> CarpetGenerator:
    try:
        return CARPET_PRESETS[name]()
    except KeyError:
        raise StructureError(f"unknown carpet preset {name!r}; known: {sorted(CARPET_PRESETS)}") from None


def carpet_from_config(table: dict) -> CarpetGenerator:
    if "preset" in table:
        return carpet_preset(table["preset"])
    try:
        return CarpetGenerator.create(int(table["D"]), int(table["l"]), table["cells"], table.get("name", "carpet"))
    except KeyError as e:
        raise StructureError(f"carpet config is missing {e.args[0]!r}") from None


# -- geometric checks -----------------------------------------------------------------

def _signed_permutations(D: int):
    for perm in itertools.permutations(range(D)):
        for flips in itertools.product((False, True), repeat=D):
            yield perm, flips


def check_symmetry(g: CarpetGenerator) -> bool:
    """Invariance under all ``2**D * D!`` isometries of the cube."""
    base = g.mask
    for perm, flips in _signed_permutations(g.D):
        m = np.transpose(base, perm)
        axes = tuple(i for i, f in enumerate(flips) if f)
        if axes:
            m = np.flip(m, axis=axes)
        if not np.array_equal(m, base):
            return False
    return True


def _face_components(coords: np.ndarray) -> np.ndarray:
    """Connected-component labels of cells under face adjacency (union-find)."""
    n = len(coords)
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    side = int(coords.max()) + 2 if n else 1
    lookup = _Lookup(coords, side)
    for axis in range(coords.shape[1]):
        off = np.zeros(coords.shape[1], dtype=np.int64)
        off[axis] = 1
        nb, src = lookup.shifted(off)
        for a, b in zip(src.tolist(), nb.tolist()):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    return np.array([find(a) for a in range(n)])


def check_connectedness(g: CarpetGenerator) -> bool:
    """Face-connected interior plus a cell path from ``{x_1 = 0}`` to ``{x_1 = 1}``."""
    labels = _face_components(g.array)
    if len(set(labels.tolist())) != 1:
        return False
    left = labels[g.array[:, 0] == 0]
    right = labels[g.array[:, 0] == g.l - 1]
    return bool(set(left.tolist()) & set(right.tolist()))


def _block_patterns_ok(D: int) -> np.ndarray:
    """For each bitmask of occupied corners of a 2^D block: empty or face-connected."""
    corners = np.array(list(itertools.product((0, 1), repeat=D)), dtype=np.int64)
    ok = np.zeros(2 ** len(corners), dtype=bool)
    for mask in range(len(ok)):
        pts = corners[[i for i in range(len(corners)) if mask >> i & 1]]
        ok[mask] = len(pts) == 0 or len(set(_face_components(pts).tolist())) == 1
    return ok


def _blocks_ok(raster: np.ndarray, shape: tuple[int, ...]) -> bool:
    """Every aligned box of ``shape`` (entries 1 or 2) in ``raster`` is empty or face-connected."""
    D = raster.ndim
    sub = list(itertools.product(*[range(s) for s in shape]))
    n_blocks = tuple(raster.shape[i] - shape[i] + 1 for i in range(D))
    code = np.zeros(n_blocks, dtype=np.int64)
    for bit, off in enumerate(sub):
        sl = tuple(slice(off[i], off[i] + n_blocks[i]) for i in range(D))
        code |= raster[sl].astype(np.int64) << bit
    pts = np.array(sub, dtype=np.int64)
    table = np.zeros(2 ** len(sub), dtype=bool)
    for mask in np.unique(code).tolist():
        sel = pts[[i for i in range(len(sub)) if mask >> i & 1]]
        table[mask] = len(sel) == 0 or len(set(_face_components(sel).tolist())) == 1
    return bool(table[code].all())


def check_nondiagonality(g: CarpetGenerator) -> bool:
    """Nondiagonality in its level-2 form.

    The level-1 pattern is rasterised on the ``l**2`` grid and every block of
    ``2**D`` level-2 cells (any integer offset) must meet it in an empty or
    face-connected set.  Blocks centred on level-1 grid points cover the
    level-1 form as well.
    """
    raster = np.kron(g.mask.astype(np.uint8), np.ones((g.l,) * g.D, dtype=np.uint8)).astype(bool)
    return _blocks_ok(raster, (2,) * g.D)


def check_nondiagonality_rectangles(g: CarpetGenerator) -> bool:
    """Rectangle form: boxes of level-1 cells with every side 1 or 2 cells long."""
    for shape in itertools.product((1, 2), repeat=g.D):
        if not _blocks_ok(g.mask, shape):
            return False
    return True


def check_borders(g: CarpetGenerator) -> bool:
    """All cells on the ``x_1`` axis edge are present."""
    idx = (slice(None),) + (0,) * (g.D - 1)
    return bool(g.mask[idx].all())


def check_all(g: CarpetGenerator) -> dict[str, bool]:
    return {
        "symmetry": check_symmetry(g),
        "connectedness": check_connectedness(g),
        "nondiagonality": check_nondiagonality(g),
        "borders": check_borders(g),
        "nondiagonality_rectangles": check_nondiagonality_rectangles(g),
    }


# -- pre-carpet graphs and resistance ------------------------------------------------------

@dataclass
class PreCarpetGraph:
    level: int
    D: int
    side: int  # grid side l**level
    coords: np.ndarray  # (n_vertices, D), word order
    edges: np.ndarray  # (n_edges, 2) with a < b

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    def laplacian(self) -> sp.csr_matrix:
        n = self.n_vertices
        a, b = self.edges[:, 0], self.edges[:, 1]
        w = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
        w = (w + w.T).tocsr()
        deg = np.asarray(w.sum(axis=1)).ravel()
        return (sp.diags(deg) - w).tocsr()

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)


def build_pre_carpet(g: CarpetGenerator, n: int, cap: int = DEFAULT_VERTEX_CAP,
                     skip_checks: bool = False) -> PreCarpetGraph:
    """Level-n cells joined when they share a ``(D-1)``-face."""
    if n < 1:
        raise ValueError("level must be at least 1")
    if not skip_checks:
        failed = [k for k, v in check_all(g).items() if not v and k != "nondiagonality_rectangles"]
        if failed:
            raise StructureError(f"generator fails: {', '.join(failed)}")
    if g.M ** n > cap:
        raise MemoryError(f"{g.M}^{n} = {g.M ** n} vertices exceeds the cap of {cap}")
    coords = g.level_coordinates(n)
    side = g.l ** n
    lookup = _Lookup(coords, side)
    parts = []
    for axis in range(g.D):
        off = np.zeros(g.D, dtype=np.int64)
        off[axis] = 1
        nb, src = lookup.shifted(off)
        parts.append(np.stack([np.minimum(src, nb), np.maximum(src, nb)], axis=1))
    edges = np.concatenate(parts)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return PreCarpetGraph(n, g.D, side, coords, edges)


def x1_faces(graph: PreCarpetGraph, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Vertices touching ``{x_axis = 0}`` and ``{x_axis = 1}``."""
    c = graph.coords[:, axis]
    return np.nonzero(c == 0)[0], np.nonzero(c == graph.side - 1)[0]


def effective_resistance(graph: PreCarpetGraph, face_a, face_b, rtol: float = 1e-10,
                         maxiter: int | None = None) -> float:
    """Resistance between two vertex sets held at potentials 0 and 1 (unit conductances)."""
    a = np.asarray(face_a, dtype=np.int64)
    b = np.asarray(face_b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both faces must be nonempty")
    if np.intersect1d(a, b).size:
        raise ValueError("faces overlap")
    n = graph.n_vertices
    L = graph.laplacian()
    fixed = np.zeros(n, dtype=bool)
    fixed[a] = fixed[b] = True
    phi = np.zeros(n)
    phi[b] = 1.0
    free = np.nonzero(~fixed)[0]
    if free.size:
        A = L[free][:, free].tocsr()
        rhs = -(L[free][:, fixed] @ phi[fixed])
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise ConvergenceError("isolated interior vertex; graph is not connected")
        pre = LinearOperator(A.shape, matvec=lambda x: x / diag, dtype=float)
        x, info = cg(A, rhs, rtol=rtol, atol=0.0, M=pre, maxiter=maxiter or 10 * A.shape[0])
        res = np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if info != 0 or res > rtol * 1.0001:
            raise ConvergenceError(f"conjugate gradient stopped at relative residual {res:.3e}")
        phi[free] = x
    current = float((L @ phi)[b].sum())
    if current <= 0:
        raise ConvergenceError("no current flows between the faces")
    return 1.0 / current


@dataclass
class ResistanceScaling:
    levels: list[int]
    resistances: list[float]
    ratios: list[float]  # rho_n = R_{n+1} / R_n
    r_hat: float
    caveat: str = CAVEAT

    def rows(self):
        for i, n in enumerate(self.levels):
            yield n, self.resistances[i], (self.ratios[i - 1] if i else None)


def resistance_scaling(g: CarpetGenerator, n_min: int, n_max: int, cap: int = DEFAULT_VERTEX_CAP,
                       rtol: float = 1e-10, skip_checks: bool = False) -> ResistanceScaling:
    if n_max < n_min + 1:
        raise ValueError("need at least two levels")
    if g.M ** n_max > cap:
        raise MemoryError(f"level {n_max} needs {g.M ** n_max} vertices, over the cap of {cap}")
    levels = list(range(n_min, n_max + 1))
    Rs = []
    for n in levels:
        graph = build_pre_carpet(g, n, cap, skip_checks=skip_checks or n > n_min)
        Rs.append(effective_resistance(graph, *x1_faces(graph), rtol=rtol))
    ratios = [Rs[i + 1] / Rs[i] for i in range(len(Rs) - 1)]
    return ResistanceScaling(levels, Rs, ratios, 1.0 / ratios[-1])


@dataclass
class DimensionReport:
    M: int
    l: int
    r_hat: float
    d_H: float
    d_w: float
    d_s: float
    identity_residual: float
    d_m_bound: int
    branch: str
    regular: bool
    ratios: list[float] = field(default_factory=list)
    caveat: str = CAVEAT

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dimension_report(g: CarpetGenerator, r_hat: float, ratios=()) -> DimensionReport:
    """Hausdorff, walk and spectral dimensions and the resulting bound on d_m.

    ``r_hat`` must be positive with ``M / r_hat > 1``.  Values ``r_hat >= 1``
    are accepted and flagged ``regular = False``: high-dimensional carpets
    have resistances that shrink with the level.
    """
    if not (math.isfinite(r_hat) and r_hat > 0 and g.M / r_hat > 1):
        raise ValueError(f"r_hat = {r_hat} must be positive with M / r_hat > 1")
    logM, logl, logMr = math.log(g.M), math.log(g.l), math.log(g.M / r_hat)
    d_H = logM / logl
    d_w = logMr / logl
    d_s = 2 * logM / logMr
    residual = abs(d_H - d_w * d_s / 2)
    if d_s < 2:
        bound, branch = 1, "d_s < 2: d_m = 1"
    elif math.isclose(d_s, 2.0, rel_tol=0, abs_tol=1e-12):
        bound, branch = 2, "d_s = 2: d_m <= 2"
    else:
        bound, branch = int(math.floor(d_s)), f"d_m <= floor(d_s) = {int(math.floor(d_s))}"
    return DimensionReport(g.M, g.l, r_hat, d_H, d_w, d_s, residual, bound, branch, r_hat < 1, list(ratios))
