"""Greedy sparse recovery (OMP, SOMP, look-ahead OMP) and least-squares helpers.

Atom selection uses correlations normalized by the atom norm, so sensing
matrices with unequal column norms (as produced by a Khatri-Rao sensing
operator) are handled the same way as unit-norm dictionaries. Ties go to the
lowest atom index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


@dataclass
class SparseSolution:
    support: tuple[int, ...]
    coeffs: np.ndarray
    residual_norm: float
    iterations: int
    residual_trace: list[float] = field(default_factory=list)


def default_ridge(gram: np.ndarray) -> float:
    return 1e-8 * float(np.real(np.trace(gram))) / max(gram.shape[0], 1)


def ridge_pinv_solve(a: np.ndarray, b: np.ndarray, ridge: float = 0.0,
                     return_rank: bool = False):
    """Least-squares solution X of X a = b, i.e. X = b a^H (a a^H + ridge I)^-1.

    With ``ridge == 0`` the Moore-Penrose pseudoinverse of ``a`` is used
    (SVD based), so singular Grams yield the minimum-norm solution.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not conformable")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge > 0:
        gram = a @ a.conj().T
        rhs = b @ a.conj().T
        x = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs.conj().T).conj().T
        rank = gram.shape[0]
    else:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
        cutoff = s.max(initial=0.0) * max(a.shape) * np.finfo(float).eps
        keep = s > cutoff
        rank = int(keep.sum())
        # pinv(a) = V diag(1/s) U^H restricted to the numerical range
        x = ((b @ vh[keep].conj().T) / s[keep]) @ u[:, keep].conj().T
    return (x, rank) if return_rank else x


def least_squares(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimum-norm LS coefficients c of y ~ a c (columns of y solved jointly)."""
    return np.linalg.lstsq(a, y, rcond=None)[0]


class _Problem:
    """Sensing matrix with cached adjoint and column norms."""

    def __init__(self, sensing: np.ndarray, targets: np.ndarray):
        self.a = np.asarray(sensing)
        self.y = np.asarray(targets)
        self.ah = self.a.conj().T
        norms = np.linalg.norm(self.a, axis=0)
        self.inv_norm = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        self.y_norm = float(np.linalg.norm(self.y))

    def fit(self, support: list[int]):
        if not support:
            return np.zeros((0,) + self.y.shape[1:], dtype=complex), self.y.copy()
        sub = self.a[:, support]
        coef = least_squares(sub, self.y)
        return coef, self.y - sub @ coef

    def scores(self, resid: np.ndarray, support: list[int]) -> np.ndarray:
        corr = self.ah @ resid
        s = np.sqrt(np.sum(np.abs(corr) ** 2, axis=1)) * self.inv_norm
        s[support] = -np.inf
        return s

    def done(self, resid: np.ndarray, tol: float | None) -> bool:
        return bool(tol) and np.linalg.norm(resid) <= tol * self.y_norm

    def greedy(self, support: list[int], resid: np.ndarray, budget: int,
               tol: float | None, trace: list[float]):
        """Extend ``support`` one best-correlated atom at a time."""
        support = list(support)
        coef = None
        while len(support) < budget and not self.done(resid, tol):
            s = self.scores(resid, support)
            best = int(np.argmax(s))
            if not s[best] > 0:
                break
            support.append(best)
            coef, resid = self.fit(support)
            trace.append(float(np.linalg.norm(resid)))
        if coef is None:
            coef, resid = self.fit(support)
        return support, coef, resid

    def solution(self, support, coef, resid, iterations, trace) -> SparseSolution:
        dense = np.zeros((self.a.shape[1],) + self.y.shape[1:], dtype=complex)
        if support:
            dense[support] = coef
        return SparseSolution(tuple(support), dense, float(np.linalg.norm(resid)),
                              iterations, trace)


def _budget(sparsity: int | None, tol: float | None, a: np.ndarray) -> int:
    if not sparsity and not tol:
        raise ValueError("need a sparsity budget or a residual tolerance")
    cap = min(a.shape)
    return min(int(sparsity), a.shape[1]) if sparsity else cap


def somp(sensing: np.ndarray, targets: np.ndarray, row_sparsity: int | None,
         tol: float | None = None) -> SparseSolution:
    """Simultaneous OMP: one support shared by all columns of ``targets``.

    Atoms are scored by the l2 norm of their correlations across columns.
    Stops after ``row_sparsity`` atoms or once the residual Frobenius norm
    falls to ``tol`` times that of the targets.
    """
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[:, None]
    prob = _Problem(sensing, targets)
    budget = _budget(row_sparsity, tol, prob.a)
    trace = [prob.y_norm]
    if prob.y_norm == 0:
        return prob.solution([], None, prob.y, 0, trace)
    support, coef, resid = prob.greedy([], prob.y.copy(), budget, tol, trace)
    return prob.solution(support, coef, resid, len(support), trace)


def omp(sensing: np.ndarray, target: np.ndarray, sparsity: int | None,
        tol: float | None = None) -> SparseSolution:
    sol = somp(sensing, np.asarray(target)[:, None], sparsity, tol)
    sol.coeffs = sol.coeffs[:, 0]
    return sol


def laomp(sensing: np.ndarray, target: np.ndarray, sparsity: int | None,
          lookahead: int = 4, tol: float | None = None,
          hints: Iterable[int] = ()) -> SparseSolution:
    """Look-ahead OMP.

    At every step the ``lookahead`` best-correlated atoms (plus any ``hints``
    not yet selected) are each tentatively added and the support is completed
    greedily to the full budget; the candidate with the smallest completed
    residual is committed. ``lookahead=1`` without hints is exactly OMP.
    """
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    prob = _Problem(sensing, np.asarray(target)[:, None])
    budget = _budget(sparsity, tol, prob.a)
    hints = [int(h) for h in hints]
    trace = [prob.y_norm]
    if prob.y_norm == 0:
        sol = prob.solution([], None, prob.y, 0, trace)
        sol.coeffs = sol.coeffs[:, 0]
        return sol
    support: list[int] = []
    resid = prob.y.copy()
    coef = None
    while len(support) < budget and not prob.done(resid, tol):
        s = prob.scores(resid, support)
        order = np.argsort(-s, kind="stable")[:lookahead]
        cands = [int(c) for c in order if s[c] > 0]
        cands += [h for h in hints if h not in support and h not in cands]
        if not cands:
            break
        best = cands[0]
        if len(cands) > 1:
            best_norm = np.inf
            for c in cands:
                _, _, r = prob.greedy(support + [c], prob.fit(support + [c])[1], budget, tol, [])
                rn = np.linalg.norm(r)
                if rn < best_norm:
                    best, best_norm = c, rn
        support.append(best)
        coef, resid = prob.fit(support)
        trace.append(float(np.linalg.norm(resid)))
    if coef is None:
        coef, resid = prob.fit(support)
    sol = prob.solution(support, coef, resid, len(support), trace)
    sol.coeffs = sol.coeffs[:, 0]
    return sol


def refit(sensing: np.ndarray, target: np.ndarray, support: Iterable[int]) -> SparseSolution:
    """LS coefficients on a fixed support (no re-selection)."""
    prob = _Problem(sensing, np.asarray(target)[:, None])
    support = [int(s) for s in support]
    coef, resid = prob.fit(support)
    sol = prob.solution(support, coef, resid, 0, [float(np.linalg.norm(resid))])
    sol.coeffs = sol.coeffs[:, 0]
    return sol


def mutual_coherence(atoms: np.ndarray) -> float:
    norms = np.linalg.norm(atoms, axis=0)
    gram = np.abs(atoms.conj().T @ atoms) / np.outer(norms, norms)
    np.fill_diagonal(gram, 0)
    return float(gram.max())
