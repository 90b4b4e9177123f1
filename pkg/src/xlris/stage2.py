"""Stage II: joint refinement of the common operator and the virtual-user channels.

Every virtual user obeys ``Z_q = S Diag(h_q) E_q + noise`` after BS-side
projection, with ``h_q = P c_q`` sparse over the polar dictionary. The ALS
loop alternates per-user sparse recovery (step A) with a closed-form LS update
of S (step B). The factorization is only defined up to the gauge
``(S, h_q) -> (c S, h_q / c)``; nothing here fixes it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .sparse import SparseSolution, laomp, refit, ridge_pinv_solve
from .stage1 import VirtualUserSet, project_rows

log = logging.getLogger(__name__)


def project_observation(y_q: np.ndarray, a_bs: np.ndarray, power: float,
                        projection: str = "matched") -> np.ndarray:
    return project_rows(y_q, a_bs, power, projection)


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product: column m is kron(a[:, m], b[:, m])."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("Khatri-Rao factors need the same number of columns")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def vec(x: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return x.reshape(-1, order="F")


def build_sensing(e_q: np.ndarray, s: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Psi_q = (E_q^T kr S) P; column g equals vec(S Diag(P[:, g]) E_q)."""
    return khatri_rao(e_q.T, s) @ atoms


def objective(z_list: Sequence[np.ndarray], s: np.ndarray, h_list: Sequence[np.ndarray],
              e_list: Sequence[np.ndarray]) -> float:
    return float(sum(np.linalg.norm(z - s @ (h[:, None] * e)) ** 2
                     for z, h, e in zip(z_list, h_list, e_list)))


def als_step_a(z_list: Sequence[np.ndarray], s: np.ndarray, atoms: np.ndarray,
               e_list: Sequence[np.ndarray], sparsity: Sequence[int], lookahead: int = 4,
               hints: Sequence[Sequence[int]] | None = None,
               frozen: Sequence[Sequence[int]] | None = None,
               tol: float | None = None) -> list[tuple[SparseSolution, np.ndarray]]:
    """Per-virtual-user sparse coefficients for a fixed operator.

    ``hints`` offers previous supports as extra look-ahead candidates;
    ``frozen`` skips selection and refits LS on the given supports.
    """
    out = []
    for q, (z, e) in enumerate(zip(z_list, e_list)):
        psi = build_sensing(e, s, atoms)
        if frozen is not None:
            sol = refit(psi, vec(z), frozen[q])
        else:
            sol = laomp(psi, vec(z), sparsity[q], lookahead=lookahead, tol=tol,
                        hints=hints[q] if hints is not None else ())
        out.append((sol, atoms @ sol.coeffs))
    return out


def als_step_b(z_list: Sequence[np.ndarray], h_list: Sequence[np.ndarray],
               e_list: Sequence[np.ndarray], ridge: float = 0.0, return_rank: bool = False):
    """S = (sum_q Z_q X_q^H)(sum_q X_q X_q^H)^+ with X_q = Diag(h_q) E_q."""
    xs = [h[:, None] * e for h, e in zip(h_list, e_list)]
    if not any(np.any(x) for x in xs):
        raise ValueError("all virtual-user channels are zero")
    x = np.hstack(xs)
    z = np.hstack(list(z_list))
    s, rank = ridge_pinv_solve(x, z, ridge, return_rank=True)
    if rank < x.shape[0]:
        log.debug("step B: rank-deficient Gram (%d < %d), minimum-norm update", rank, x.shape[0])
    return (s, rank) if return_rank else s


@dataclass
class AlsState:
    iteration: int
    operator: np.ndarray
    solutions: list[SparseSolution]
    channels: list[np.ndarray]
    objective_trace: list[float]
    initial_objective: float
    warnings: list[str] = field(default_factory=list)
    rank_deficient_updates: int = 0
    counters: dict = field(default_factory=dict)

    def rescaled(self, c: complex) -> "AlsState":
        """Gauge-transformed copy: S -> c S, h_q -> h_q / c."""
        inv = 1 / c
        return AlsState(self.iteration, c * self.operator, self.solutions,
                        [h * inv for h in self.channels], list(self.objective_trace),
                        self.initial_objective, list(self.warnings),
                        self.rank_deficient_updates, dict(self.counters))


def run_als(virtual: VirtualUserSet, a_bs: np.ndarray, s0: np.ndarray, atoms: np.ndarray,
            sparsity: int | Sequence[int] = 1, max_iters: int = 3, rel_tol: float = 1e-4,
            power: float = 1.0, lookahead: int = 4, projection: str = "matched",
            warm_start: bool = True, freeze_support: bool = False,
            tol: float | None = None) -> AlsState:
    """Alternate step A and step B from S^(0).

    The Stage-I state is S^(0) together with step-A estimates of every
    virtual user under S^(0). Each iteration then updates S (step B) and
    re-estimates the channels (step A), recording the joint objective.
    Iteration stops after ``max_iters`` or when the relative objective
    decrease falls below ``rel_tol``. With ``freeze_support`` step A keeps the
    initial supports and only refits coefficients.
    """
    n_q = virtual.count
    if isinstance(sparsity, (int, np.integer)):
        sparsity = [int(sparsity)] * n_q
    z_list = [project_observation(y, a_bs, power, projection) for y in virtual.observations]
    e_list = virtual.patterns
    counters = {"init_sparse_solves": n_q, "sparse_solves": 0, "ls_updates": 0}

    step = als_step_a(z_list, s0, atoms, e_list, sparsity, lookahead, tol=tol)
    sols = [sol for sol, _ in step]
    hs = [h for _, h in step]
    s = s0
    obj0 = objective(z_list, s, hs, e_list)
    state = AlsState(0, s, sols, hs, [], obj0, counters=counters)
    supports = [sol.support for sol in sols]
    prev = obj0
    scale = max(sum(np.linalg.norm(z) ** 2 for z in z_list), np.finfo(float).tiny)
    for i in range(1, max_iters + 1):
        s, rank = als_step_b(z_list, hs, e_list, return_rank=True)
        counters["ls_updates"] += 1
        if rank < s.shape[1]:
            state.rank_deficient_updates += 1
        after_b = objective(z_list, s, hs, e_list)
        step = als_step_a(z_list, s, atoms, e_list, sparsity, lookahead,
                          hints=supports if warm_start else None,
                          frozen=supports if freeze_support else None, tol=tol)
        counters["sparse_solves"] += n_q
        sols = [sol for sol, _ in step]
        hs = [h for _, h in step]
        new_supports = [sol.support for sol in sols]
        cur = objective(z_list, s, hs, e_list)
        if cur > prev + 1e-9 * scale and new_supports == supports:
            msg = f"iteration {i}: objective rose from {prev:.6g} to {cur:.6g} with fixed supports"
            log.warning(msg)
            state.warnings.append(msg)
        if after_b > prev + 1e-9 * scale:
            msg = f"iteration {i}: step B raised the objective ({prev:.6g} -> {after_b:.6g})"
            log.warning(msg)
            state.warnings.append(msg)
        supports = new_supports
        state.iteration, state.operator, state.solutions, state.channels = i, s, sols, hs
        state.objective_trace.append(cur)
        if prev == 0 or (prev - cur) / prev < rel_tol:
            break
        prev = cur
    return state


@dataclass
class FinalEstimates:
    h_br_hat: np.ndarray
    h_ru_hat: list[np.ndarray]
    h_v: list[np.ndarray]

    @cached_property
    def g_hat(self) -> list[list[np.ndarray]]:
        return [[self.cascaded(k, n) for n in range(h.shape[1])] for k, h in enumerate(self.h_ru_hat)]

    def cascaded(self, k: int, n: int) -> np.ndarray:
        return self.h_br_hat * self.h_ru_hat[k][:, n][None, :]


def finalize_estimates(als: AlsState, a_bs: np.ndarray, virtual: VirtualUserSet,
                       n_users: int | None = None) -> FinalEstimates:
    """H_BR = A_BS S, H_RU,k = [h_q]_{q in V_k} A_UE,k^H, G_{k,n} = H_BR Diag(H_RU,k[:, n])."""
    h_br = a_bs @ als.operator
    n_users = n_users if n_users is not None else len(virtual.ue_steering)
    h_v, h_ru = [], []
    for k in range(n_users):
        members = virtual.members(k)
        hk = np.column_stack([als.channels[q] for q in members])
        h_v.append(hk)
        h_ru.append(hk @ virtual.ue_steering[k].conj().T)
    return FinalEstimates(h_br, h_ru, h_v)
