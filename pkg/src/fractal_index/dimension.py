"""Rank statistics of cell-ratio matrix fields and the renormalisation step.

None of this proves anything about the index; it produces monotone-in-level
evidence that can be read next to the theory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .exact import BigIntArray, leading_minors
from .harmonic import HarmonicStructure, PiecewiseHarmonicFunction, harmonic_extension
from .measures import PhiCellField, phi_eigenvalues, phi_field
from .structure import PcfStructure, index_word

__all__ = [
    "RankSpectrumReport",
    "BlowupStep",
    "BlowupTrace",
    "epsilon_rank",
    "rank_spectrum",
    "blowup_search",
    "renormalization_matrix",
    "renormalized_field",
    "renormalize_pair",
    "index_report",
    "default_basis",
]

CAVEAT = ("cell-resolution estimate from finitely many levels; evidence consistent with "
          "the index, not a proof of it")


def epsilon_rank(eigenvalues: np.ndarray, epsilon: float) -> np.ndarray:
    """Number of eigenvalues above ``epsilon`` times the largest one (rows sorted descending)."""
    ev = np.atleast_2d(eigenvalues)
    top = ev[:, :1]
    return ((ev > epsilon * top) & (top > 0)).sum(axis=1)


@dataclass
class RankSpectrumReport:
    level: int
    epsilon: float
    d: int
    eigenvalues: np.ndarray  # (cells, d), descending
    ranks: np.ndarray  # (cells,)
    weights: np.ndarray  # normalised Kusuoka masses
    histogram: dict[int, float]
    max_rank: int
    mass_above: float  # nu-mass of cells with lambda_2 / lambda_1 > epsilon

    def summary(self) -> dict:
        return {
            "level": self.level,
            "epsilon": self.epsilon,
            "d": self.d,
            "max_rank": self.max_rank,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mass_above": self.mass_above,
        }


def _weights(phi: PhiCellField) -> np.ndarray:
    w = phi.kusuoka.to_float()
    total = w.sum()
    return w / total if total > 0 else np.zeros_like(w)


def rank_spectrum(fs: Sequence[PiecewiseHarmonicFunction], m: int, epsilon: float,
                  phi: PhiCellField | None = None) -> RankSpectrumReport:
    if not fs:
        raise ValueError("need at least one function")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    phi = phi_field(fs, m) if phi is None else phi
    ev = phi_eigenvalues(phi)
    ranks = epsilon_rank(ev, epsilon)
    weights = _weights(phi)
    hist: dict[int, float] = {}
    for k in range(phi.d + 1):
        mass = float(weights[ranks == k].sum())
        if mass > 0 or k == 0:
            hist[k] = mass
    positive = weights > 0
    max_rank = int(ranks[positive].max()) if positive.any() else 0
    if phi.d >= 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ev[:, 0] > 0, ev[:, 1] / np.where(ev[:, 0] > 0, ev[:, 0], 1.0), 0.0)
        mass_above = float(weights[ratio > epsilon].sum())
    else:
        mass_above = 0.0
    return RankSpectrumReport(m, epsilon, phi.d, ev, ranks, weights, hist, max_rank, mass_above)


# -- renormalisation ----------------------------------------------------------

def _check_positive_definite(L) -> np.ndarray:
    arr = np.asarray(L, dtype=object if isinstance(np.asarray(L).flat[0], Fraction) else float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("L must be a square matrix")
    if arr.dtype == object:
        rows = [[Fraction(x) for x in row] for row in arr.tolist()]
        if any(rows[i][j] != rows[j][i] for i in range(len(rows)) for j in range(i)):
            raise ValueError("L must be symmetric")
        if any(m <= 0 for m in leading_minors(rows)):
            raise ValueError("L is not positive definite")
        return np.array([[float(x) for x in row] for row in rows])
    if not np.allclose(arr, arr.T, rtol=0, atol=1e-14 * max(1.0, np.abs(arr).max())):
        raise ValueError("L must be symmetric")
    minors = [np.linalg.det(arr[:k, :k]) for k in range(1, arr.shape[0] + 1)]
    if any(m <= 0 for m in minors):
        raise ValueError("L is not positive definite")
    return arr


def renormalization_matrix(L) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(C, U, lam)`` with ``U^T L U = diag(lam)`` and ``C = U diag(lam**-1/2)``.

    ``C^T L C`` is the identity, so ``h'_i = sum_k C[k, i] h_k`` has identity
    cell ratios wherever the ratios of ``h`` equal ``L``.
    """
    arr = _check_positive_definite(L)
    lam, U = np.linalg.eigh(arr)
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    # deterministic sign: largest-magnitude entry of each column positive
    for j in range(U.shape[1]):
        if U[np.argmax(np.abs(U[:, j])), j] < 0:
            U[:, j] = -U[:, j]
    return U / np.sqrt(lam)[None, :], U, lam


def renormalized_field(matrices: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Cell ratios of the combination ``h' = h C`` given the ratios of ``h``.

    ``nu_{h'_i,h'_j} = sum_kl C_ki C_lj nu_{h_k,h_l}``; dividing by the new
    Kusuoka measure gives ``d C^T M C / tr(C^T M C)`` per cell.
    """
    mats = np.asarray(matrices, dtype=float)
    d = mats.shape[-1]
    new = np.einsum("ki,nkl,lj->nij", C, mats, C)
    tr = np.trace(new, axis1=1, axis2=2)
    out = np.zeros_like(new)
    ok = tr > 0
    out[ok] = d * new[ok] / tr[ok, None, None]
    return out


def renormalize_pair(L, fs: Sequence[PiecewiseHarmonicFunction],
                     max_denominator: int = 10**15) -> tuple[PiecewiseHarmonicFunction, ...]:
    """Recombine ``fs`` so that cells whose ratio matrix equals ``L`` get the identity.

    Coefficients are rounded to fractions with denominators at most
    ``max_denominator`` (exact when they are rational, as for a diagonal ``L``
    with square entries).
    """
    if len(fs) != np.asarray(L).shape[0]:
        raise ValueError("L and the function tuple have different sizes")
    C, _, _ = renormalization_matrix(L)
    d = len(fs)
    coeffs = [[Fraction(float(C[k, i])).limit_denominator(max_denominator) for k in range(d)]
              for i in range(d)]
    out = []
    for i in range(d):
        acc = None
        for k in range(d):
            if coeffs[i][k]:
                term = fs[k].scale(coeffs[i][k])
                acc = term if acc is None else acc + term
        out.append(acc if acc is not None else fs[0].scale(0))
    return tuple(out)


# -- blowup search --------------------------------------------------------------

@dataclass
class BlowupStep:
    word: str
    phi: list[list[float]]
    det: float
    distance: float
    fraction: float  # nu-fraction of deepest descendants within the neighbourhood


@dataclass
class BlowupTrace:
    target: list[list[float]]
    threshold: float
    max_level: int
    candidate_mass: dict[int, float]
    failure_depth: int | None
    steps: list[BlowupStep] = field(default_factory=list)
    degenerate: bool = False
    renormalized_phi: list[list[float]] | None = None

    def summary(self) -> dict:
        return {
            "target": self.target,
            "threshold": self.threshold,
            "max_level": self.max_level,
            "candidate_mass": {str(k): v for k, v in self.candidate_mass.items()},
            "failure_depth": self.failure_depth,
            "degenerate": self.degenerate,
            "steps": [s.__dict__ for s in self.steps],
            "renormalized_phi": self.renormalized_phi,
        }


def _coarse_fields(phi: PhiCellField) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Matrices and nu-weights at every level 1..phi.level from exact coarsening."""
    S, d = phi.n_symbols, phi.d
    out = {}
    gram, trace = phi.gram, phi.trace
    total = trace.sum().to_float()
    total = float(total) if np.ndim(total) == 0 else float(total.reshape(-1)[0])
    for n in range(phi.level, 0, -1):
        field_n = PhiCellField(n, d, S, gram, trace, phi.kusuoka)
        w = trace.to_float() / total if total > 0 else np.zeros(S ** n)
        out[n] = (field_n.to_float(), w, phi_eigenvalues(field_n))
        if n > 1:
            gram = gram.reshape(-1, S, d, d).sum(axis=1)
            trace = trace.reshape(-1, S).sum(axis=1)
    return out


def _weighted_medoid(mats: np.ndarray, weights: np.ndarray, cap: int = 4000) -> np.ndarray:
    if len(mats) > cap:
        keep = np.argsort(-weights, kind="stable")[:cap]
        mats, weights = mats[keep], weights[keep]
    flat = mats.reshape(len(mats), -1)
    dist = np.sqrt(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2))
    cost = dist @ weights
    return mats[int(np.argmin(cost))]


def blowup_search(fs: Sequence[PiecewiseHarmonicFunction], a: float,
                  k: Sequence[float] | Callable[[int], float] | None = None,
                  max_level: int = 8) -> BlowupTrace:
    """Look for a cell neighbourhood where the ratio matrix stays near a nondegenerate ``L``.

    ``L`` is the nu-weighted medoid of cells with ``det >= a`` at the deepest
    level that still has such cells.  The descent then walks down the word
    tree, at level ``n`` choosing the child with the largest nu-fraction of
    deepest-level descendants within Frobenius distance ``1/k_n`` of ``L``
    (ties broken lexicographically).
    """
    d = len(fs)
    if d == 1:
        return BlowupTrace([[1.0]], a, max_level, {}, None, [], False, [[1.0]])
    kfun = (lambda n: float(n)) if k is None else (k if callable(k) else (lambda n: float(k[min(n, len(k)) - 1])))
    phi = phi_field(fs, max_level)
    levels = _coarse_fields(phi)
    S = phi.n_symbols
    cand_mass, failure = {}, None
    deepest = None
    for n in range(1, max_level + 1):
        mats, w, ev = levels[n]
        dets = np.prod(ev, axis=1)
        mask = (dets >= a) & (w > 0)
        cand_mass[n] = float(w[mask].sum())
        if mask.any():
            deepest = n
        elif failure is None:
            failure = n
    if not (levels[1][1] > 0).any() or cand_mass[1] == 0.0:
        return BlowupTrace([], a, max_level, cand_mass, failure or 1, [], True, None)
    mats, w, ev = levels[deepest]
    mask = (np.prod(ev, axis=1) >= a) & (w > 0)
    L = _weighted_medoid(mats[mask], w[mask])
    fine_mats, fine_w, _ = levels[max_level]
    near_dist = np.sqrt(((fine_mats - L) ** 2).sum(axis=(1, 2)))
    steps = []
    word_idx = 0
    for n in range(1, max_level + 1):
        radius = 1.0 / kfun(n)
        near = (near_dist < radius) * fine_w
        block = S ** (max_level - n)
        best, best_frac = None, -1.0
        for c in range(S):
            child = word_idx * S + c
            sl = slice(child * block, (child + 1) * block)
            mass = fine_w[sl].sum()
            frac = float(near[sl].sum() / mass) if mass > 0 else 0.0
            if frac > best_frac:
                best, best_frac = child, frac
        word_idx = best
        m_n, _, ev_n = levels[n]
        mat = m_n[word_idx]
        steps.append(BlowupStep(index_word(word_idx, n, S), mat.tolist(), float(np.prod(ev_n[word_idx])),
                                float(np.sqrt(((mat - L) ** 2).sum())), best_frac))
    renorm = None
    try:
        C, _, _ = renormalization_matrix(L)
        renorm = renormalized_field(levels[max_level][0][word_idx][None], C)[0].tolist()
    except ValueError:
        pass
    return BlowupTrace(L.tolist(), a, max_level, cand_mass, failure, steps, False, renorm)


# -- reports ---------------------------------------------------------------------

def default_basis(s: PcfStructure, hs: HarmonicStructure) -> list[PiecewiseHarmonicFunction]:
    """Harmonic extensions of ``e_0, ..., e_{n-2}``: a basis of harmonic functions modulo constants."""
    n0 = s.n_boundary
    return [harmonic_extension(s, hs, [int(a == i) for a in range(n0)], 0) for i in range(n0 - 1)]


def _vanishing(masses: list[float]) -> bool:
    """Strictly decreasing and the deepest value below half the first."""
    if len(masses) < 2:
        return False
    dec = all(b < a for a, b in zip(masses, masses[1:]))
    return dec and masses[-1] < 0.5 * masses[0]


def index_report(s: PcfStructure, hs: HarmonicStructure, basis: Sequence[PiecewiseHarmonicFunction],
                 levels: Sequence[int], epsilons: Sequence[float], basis_names: Sequence[str] | None = None) -> dict:
    """Index estimate from rank spectra over several levels and thresholds.

    Index 0 is reported exactly when every basis function has zero energy.
    Otherwise, for each ``epsilon`` the estimate is the largest ``k`` whose
    nu-mass of cells with epsilon-rank ``>= k`` is positive at the deepest
    level and does not vanish across levels (vanishing: strictly decreasing
    with the deepest mass below half the shallowest).  The raw maximum
    epsilon-rank at the deepest level is reported alongside.
    """
    levels = sorted(levels)
    names = list(basis_names) if basis_names else [f"f{i}" for i in range(len(basis))]
    spectra = {}
    for m in levels:
        phi = phi_field(basis, m)
        spectra[m] = {eps: rank_spectrum(basis, m, eps, phi=phi) for eps in epsilons}
    zero = all(float(spectra[levels[0]][epsilons[0]].weights.sum()) == 0.0 for _ in [0])
    per_eps = {}
    for eps in epsilons:
        if zero:
            per_eps[str(eps)] = {"estimate": 0, "max_rank_deepest": 0, "mass_rank_at_least": {}}
            continue
        d = len(basis)
        tail = {kk: [float(spectra[m][eps].weights[spectra[m][eps].ranks >= kk].sum()) for m in levels]
                for kk in range(1, d + 1)}
        estimate = 0
        for kk in range(1, d + 1):
            if tail[kk][-1] > 0 and not _vanishing(tail[kk]):
                estimate = kk
        per_eps[str(eps)] = {
            "estimate": estimate,
            "max_rank_deepest": spectra[levels[-1]][eps].max_rank,
            "mass_rank_at_least": {str(kk): v for kk, v in tail.items()},
            "mass_above_by_level": {str(m): spectra[m][eps].mass_above for m in levels},
        }
    estimates = {v["estimate"] for v in per_eps.values()}
    stable = len(estimates) == 1
    return {
        "structure": s.name,
        "basis": names,
        "levels": list(levels),
        "epsilons": list(epsilons),
        "index_zero": zero,
        "estimate": estimates.pop() if stable else None,
        "stable_across_epsilon": stable,
        "per_epsilon": per_eps,
        "caveat": CAVEAT,
    }
