"""Stage I: typical-user initialization.

User-side support recovery splits each multi-antenna user into virtual
single-antenna users. One of them (branch 1 of user 1) then yields the BS-side
angles, the per-path separated observations, a polar-domain estimate of its
RIS-side channel and the initial common BS-RIS operator.

Conjugation convention: for a projected observation ``Z = S Diag(h) E`` row
``l`` is used as the vector ``p_l = Z[l, :]`` (no conjugation), so
``p_l = E^T (conj(a_M(omega_l)) * h) alpha_l``. This keeps the sparse model
for ``h`` self-consistent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import AngularDictionary, PolarDictionary, far_field_steering, spatial_frequency_steering
from .sparse import SparseSolution, default_ridge, laomp, ridge_pinv_solve, somp

log = logging.getLogger(__name__)


@dataclass
class VirtualUserSet:
    observations: list[np.ndarray]          # Y_q, N_t x tau_q
    patterns: list[np.ndarray]              # E_q, M x tau_q
    owner_map: list[tuple[int, int]]        # q -> (user k, branch j)
    ue_steering: list[np.ndarray]           # per user, N_r x J_k-hat
    supports: list[tuple[int, ...]]         # per user dictionary indices
    ridge_flags: list[bool] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.observations)

    def members(self, k: int) -> list[int]:
        return [q for q, (owner, _) in enumerate(self.owner_map) if owner == k]


@dataclass
class Stage1Result:
    bs_steering: np.ndarray
    bs_angles: list[float]
    separated_paths: list[np.ndarray]
    reference_index: int
    ref_channel: np.ndarray                 # h_1^(0) over the RIS, gauge alpha_r
    ref_solution: SparseSolution
    cascaded_ris: np.ndarray                # M x L columns h_RIS,l
    path_offsets: list[tuple[float, complex]]  # (delta spatial freq, eta); reference slot is (0, 1)
    initial_operator: np.ndarray            # S^(0), L x M
    initial_cascade: np.ndarray             # G_1^(0), N_t x M


def aggregate_observations(y_slots) -> np.ndarray:
    """[Y_1^T, ..., Y_tau^T], an N_r x (N_t tau) matrix."""
    slots = [np.asarray(y) for y in y_slots]
    if not slots:
        raise ValueError("no training slots")
    shape = slots[0].shape
    if any(y.shape != shape for y in slots):
        raise ValueError("training slots have mismatched dimensions")
    return np.concatenate([y.T for y in slots], axis=1)


def estimate_user_support(y_agg: np.ndarray, dictionary: AngularDictionary, j_k: int,
                          tol: float | None = None):
    """Row-sparse recovery of the user-side angles.

    The columns of ``y_agg`` live in the span of ``conj(A_UE)``, so the
    shared support is recovered from ``conj(y_agg)``; the returned steering
    matrix is then directly an estimate of ``A_UE``.
    """
    if j_k < 1:
        raise ValueError("j_k must be >= 1")
    sol = somp(dictionary.atoms, y_agg.conj(), j_k, tol)
    return sol.support, dictionary.atoms[:, list(sol.support)]


def build_virtual_users(observations: Sequence[np.ndarray], ue_steering: Sequence[np.ndarray],
                        supports: Sequence[tuple[int, ...]] | None = None,
                        patterns: Sequence[np.ndarray] | None = None,
                        cond_limit: float = 1e10) -> VirtualUserSet:
    """Split user observations along the estimated user-side steering directions.

    ``observations[k]`` is a (tau, N_t, N_r) stack. Each slot is mapped to
    ``Y A (A^H A)^-1``; column j over all slots is virtual user (k, j).
    Near-singular Grams use a small ridge and are flagged.
    """
    obs, owners, pats, flags = [], [], [], []
    for k, (y, a) in enumerate(zip(observations, ue_steering)):
        gram = a.conj().T @ a
        flagged = np.linalg.cond(gram) > cond_limit
        if flagged:
            log.warning("user %d: near-singular user-side Gram, using ridge", k)
            gram = gram + default_ridge(gram) * np.eye(gram.shape[0])
        flags.append(bool(flagged))
        w = a @ np.linalg.inv(gram)                       # N_r x J
        ytil = np.asarray(y) @ w                          # tau x N_t x J
        for j in range(a.shape[1]):
            obs.append(ytil[:, :, j].T)
            owners.append((k, j))
            if patterns is not None:
                pats.append(patterns[k])
    return VirtualUserSet(obs, pats, owners, list(ue_steering),
                          list(supports) if supports is not None else [], flags)


def _wrap(freq: np.ndarray | float):
    return (np.asarray(freq) + 0.5) % 1.0 - 0.5


def _energy(y: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    a = spatial_frequency_steering(y.shape[0], freqs)
    return np.sum(np.abs(a.conj().T @ y) ** 2, axis=1)


def _project_out(y: np.ndarray, freqs: list[float]) -> np.ndarray:
    if not freqs:
        return y
    a = spatial_frequency_steering(y.shape[0], np.asarray(freqs))
    return y - a @ np.linalg.lstsq(a, y, rcond=None)[0]


def _refine(y: np.ndarray, center: float, refine_grid: int) -> float:
    n = y.shape[0]
    offsets = (np.arange(refine_grid) - refine_grid // 2) / (refine_grid * n)
    cand = center + offsets
    return float(cand[int(np.argmax(_energy(y, cand)))])


def estimate_bs_angles(y1: np.ndarray, l_hat: int | None, spacing: float, wavelength: float,
                       refine_grid: int = 64, threshold: float = 0.05, max_paths: int | None = None,
                       sweeps: int = 1):
    """DFT peak search with fine rotation refinement for the BS-side angles.

    Peaks are taken one at a time from the spectrum of the residual left after
    projecting out the paths found so far, and each is refined over
    ``refine_grid`` rotations within half a DFT bin. ``sweeps`` extra passes
    re-refine every path with the others projected out. With ``l_hat=None`` the
    path count is detected: peaks are kept while their bin energy exceeds
    ``threshold`` times the first peak's.

    Returns the N_t x L steering matrix, the angles and the spatial frequencies.
    """
    n = y1.shape[0]
    if l_hat is not None and l_hat > n:
        raise ValueError(f"cannot resolve {l_hat} paths with {n} antennas")
    if l_hat is not None and l_hat < 1:
        raise ValueError("l_hat must be >= 1")
    limit = l_hat if l_hat is not None else (max_paths or n)
    freqs: list[float] = []
    centers: list[float] = []
    first_peak = None
    resid = y1
    for _ in range(limit):
        spectrum = np.sum(np.abs(np.fft.fft(resid, axis=0)) ** 2, axis=1)
        k = int(np.argmax(spectrum))
        if first_peak is None:
            first_peak = spectrum[k]
        elif l_hat is None and spectrum[k] < threshold * first_peak:
            break
        if spectrum[k] == 0:
            break
        center = float(_wrap(k / n))
        centers.append(center)
        freqs.append(_refine(resid, center, refine_grid))
        resid = _project_out(y1, freqs)
    for _ in range(sweeps):
        for l in range(len(freqs)):
            others = freqs[:l] + freqs[l + 1:]
            freqs[l] = _refine(_project_out(y1, others), centers[l], refine_grid)
    freqs = [float(_wrap(f)) for f in freqs]
    sines = np.clip(np.asarray(freqs) * wavelength / spacing, -1, 1)
    angles = np.arcsin(sines)
    a_bs = far_field_steering(n, spacing, wavelength, angles) if freqs else np.zeros((n, 0), complex)
    return a_bs, angles.tolist(), freqs


def project_rows(y: np.ndarray, a_bs: np.ndarray, power: float, projection: str = "matched") -> np.ndarray:
    """BS-side projection (1/(N_t sqrt p)) A^H Y, or its LS form with ``projection='ls'``."""
    if projection == "matched":
        return a_bs.conj().T @ y / (a_bs.shape[0] * np.sqrt(power))
    if projection == "ls":
        return np.linalg.lstsq(a_bs, y, rcond=None)[0] / np.sqrt(power)
    raise ValueError(f"unknown projection {projection!r}")


def separate_paths(y1: np.ndarray, a_bs: np.ndarray, power: float,
                   projection: str = "matched") -> list[np.ndarray]:
    p = project_rows(y1, a_bs, power, projection)
    return [p[l] for l in range(p.shape[0])]


def select_reference_path(paths: Sequence[np.ndarray]) -> int:
    if len(paths) == 0:
        raise ValueError("no separated paths")
    energy = np.array([np.vdot(p, p).real for p in paths])
    return int(np.argmax(energy))


def reference_sensing(pattern: np.ndarray, omega_r: float, dictionary: PolarDictionary,
                      spacing: float, wavelength: float) -> np.ndarray:
    """E^T Diag(conj(a_M(omega_r))) P."""
    a = far_field_steering(pattern.shape[0], spacing, wavelength, omega_r)
    return pattern.T @ (a.conj()[:, None] * dictionary.atoms)


def recover_reference_channel(p_r: np.ndarray, pattern: np.ndarray, omega_r: float,
                              dictionary: PolarDictionary, j1: int, spacing: float,
                              wavelength: float, lookahead: int = 4, tol: float | None = None):
    """Polar-domain sparse recovery of the typical virtual user's RIS channel.

    Returns ``(h1, solution, h_ris_r)`` where ``h_ris_r = conj(a_M(omega_r)) * h1``
    is the cascaded RIS-side vector of the reference path.
    """
    d_r = reference_sensing(pattern, omega_r, dictionary, spacing, wavelength)
    sol = laomp(d_r, p_r, j1, lookahead=lookahead, tol=tol)
    h1 = dictionary.atoms @ sol.coeffs
    a = far_field_steering(pattern.shape[0], spacing, wavelength, omega_r)
    return h1, sol, a.conj() * h1


def offset_response(h_ris_r: np.ndarray, pattern: np.ndarray, freqs) -> np.ndarray:
    """z(nu) = E^T (h_RIS,r * conj(a(nu))) for each spatial-frequency offset nu."""
    a = spatial_frequency_steering(h_ris_r.shape[0], np.atleast_1d(freqs))
    return pattern.T @ (h_ris_r[:, None] * a.conj())


def estimate_path_offsets(p_l: np.ndarray, h_ris_r: np.ndarray, pattern: np.ndarray,
                          spacing: float, wavelength: float, grid_size: int = 1024,
                          refine_iters: int = 3, shrink: int = 8):
    """Spatial-frequency offset and complex gain of a non-reference path.

    The offset maximizes the normalized correlation |<p_l, z(nu)>| / ||z(nu)||
    over ``grid_size`` points on [-2d/lambda, 2d/lambda]; each refinement
    round rescans +-one step around the optimum with the step divided by
    ``shrink``. The gain is the LS fit of ``p_l`` on ``z`` at the optimum.
    """
    if not np.any(h_ris_r):
        raise ValueError("reference cascaded vector is zero")
    half = 2 * spacing / wavelength
    grid = np.linspace(-half, half, grid_size)
    step = grid[1] - grid[0] if grid_size > 1 else half

    def best_of(freqs):
        z = offset_response(h_ris_r, pattern, freqs)
        norms = np.linalg.norm(z, axis=0)
        score = np.divide(np.abs(z.conj().T @ p_l), norms, out=np.zeros_like(norms), where=norms > 0)
        return float(freqs[int(np.argmax(score))])

    nu = best_of(grid)
    for _ in range(refine_iters):
        nu = best_of(nu + step * np.linspace(-1, 1, 2 * shrink + 1))
        step /= shrink
    nu = float(_wrap(nu))           # the search interval spans two aliases of each offset
    z = offset_response(h_ris_r, pattern, nu)[:, 0]
    zz = np.vdot(z, z).real
    if zz == 0:
        raise ValueError("degenerate path: zero correlation template")
    eta = complex(np.vdot(z, p_l) / zz)
    a = spatial_frequency_steering(h_ris_r.shape[0], nu)
    return nu, eta, a.conj() * h_ris_r * eta


def init_common_operator(z1: np.ndarray, h1: np.ndarray, pattern: np.ndarray,
                         method: str = "pinv", omega_r: float | None = None,
                         offsets: Sequence[tuple[float, complex]] | None = None,
                         reference_index: int | None = None,
                         spacing: float | None = None, wavelength: float | None = None) -> np.ndarray:
    """Initial common operator S^(0) from the typical virtual user.

    ``method='pinv'``: S = Z_1 X^H (X X^H)^+ with X = Diag(h1) E (minimum
    norm when fewer slots than RIS elements). ``method='angle-gain'``: rows
    built from the far-field structure, ``S[l] = eta_l conj(a(omega_r) * a(nu_l))``
    with the reference row ``conj(a(omega_r))``.
    """
    if not np.any(h1):
        raise ValueError("initial RIS channel is zero")
    if method == "pinv":
        x = h1[:, None] * pattern
        return ridge_pinv_solve(x, z1)
    if method == "angle-gain":
        if omega_r is None or offsets is None or spacing is None or wavelength is None:
            raise ValueError("angle-gain initialization needs omega_r, offsets and the array geometry")
        m = h1.shape[0]
        base = far_field_steering(m, spacing, wavelength, omega_r).conj()
        rows = []
        for nu, eta in offsets:
            rows.append(eta * base * spatial_frequency_steering(m, nu).conj())
        return np.vstack(rows)
    raise ValueError(f"unknown operator initialization {method!r}")


def run_stage1(virtual: VirtualUserSet, l_hat: int | None, omega_lookup, dictionary: PolarDictionary,
               power: float, spacing_bs: float, spacing_ris: float, wavelength: float,
               j1: int = 1, lookahead: int = 4, projection: str = "matched",
               operator_init: str = "pinv", refine_grid: int = 64, offset_grid: int = 1024,
               offset_refine: int = 3, threshold: float = 0.05, tol: float | None = None,
               typical: int = 0) -> Stage1Result:
    """BS-side estimation and operator initialization from virtual user ``typical``.

    ``omega_lookup(bs_angle)`` supplies the known RIS-side angle of the
    reference path from the fixed BS/RIS geometry.
    """
    y1 = virtual.observations[typical]
    e1 = virtual.patterns[typical]
    a_bs, angles, _ = estimate_bs_angles(y1, l_hat, spacing_bs, wavelength, refine_grid, threshold)
    if a_bs.shape[1] == 0:
        raise RuntimeError("no BS-RIS path detected")
    z1 = project_rows(y1, a_bs, power, projection)
    paths = [z1[l] for l in range(z1.shape[0])]
    r = select_reference_path(paths)
    omega_r = float(omega_lookup(angles[r]))
    h1, sol, h_ris_r = recover_reference_channel(paths[r], e1, omega_r, dictionary, j1,
                                                 spacing_ris, wavelength, lookahead, tol)
    m = h1.shape[0]
    h_ris = np.zeros((m, len(paths)), dtype=complex)
    offsets: list[tuple[float, complex]] = []
    for l, p in enumerate(paths):
        if l == r:
            h_ris[:, l] = h_ris_r
            offsets.append((0.0, 1.0 + 0j))
            continue
        nu, eta, h_l = estimate_path_offsets(p, h_ris_r, e1, spacing_ris, wavelength,
                                             offset_grid, offset_refine)
        h_ris[:, l] = h_l
        offsets.append((nu, eta))
    s0 = init_common_operator(z1, h1, e1, operator_init, omega_r, offsets, r, spacing_ris, wavelength)
    g1 = a_bs @ h_ris.T
    return Stage1Result(a_bs, angles, paths, r, h1, sol, h_ris, offsets, s0, g1)
