"""NMSE of cascaded-channel estimates, pilot-overhead formulas and run counters."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .stage2 import FinalEstimates

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    nmse_linear: float
    nmse_db: float
    per_user_nmse: list[float]
    overhead_proposed: int
    overhead_benchmark: int
    als_objective_trace: list[float] = field(default_factory=list)
    op_counters: dict = field(default_factory=dict)


def to_db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def _cascade_error(hbr_hat, hru_hat, hbr, hru):
    """sum_n ||Hh Diag(hh_n) - H Diag(h_n)||_F^2 and sum_n ||H Diag(h_n)||_F^2."""
    g = hbr[:, :, None] * hru[None]
    diff = hbr_hat[:, :, None] * hru_hat[None] - g
    return float(np.vdot(diff, diff).real), float(np.vdot(g, g).real)


def nmse_terms(estimates: FinalEstimates, truth: ChannelSet, mode: str = "per-user"):
    """Error and energy sums of one realization, plus per-user NMSE values.

    ``mode='per-user'`` sums the per-user errors; ``mode='summed'`` puts the
    sum over users inside the norm (errors of different users may cancel).
    """
    if estimates.h_br_hat.shape != truth.h_br.shape or len(estimates.h_ru_hat) != len(truth.h_ru):
        raise ValueError("estimate and truth shapes differ")
    per_user = []
    num = den = 0.0
    for hh, h in zip(estimates.h_ru_hat, truth.h_ru):
        if hh.shape != h.shape:
            raise ValueError("estimate and truth shapes differ")
        e, g = _cascade_error(estimates.h_br_hat, hh, truth.h_br, h)
        per_user.append(e / g if g > 0 else math.nan)
        num += e
        den += g
    if mode == "summed":
        hh = sum(estimates.h_ru_hat)
        h = sum(truth.h_ru)
        num, _ = _cascade_error(estimates.h_br_hat, hh, truth.h_br, h)
    elif mode != "per-user":
        raise ValueError(f"unknown NMSE mode {mode!r}")
    if den == 0:
        raise ValueError("true cascaded channel has zero energy; NMSE undefined")
    return num, den, per_user


def nmse(estimates: FinalEstimates, truth: ChannelSet, mode: str = "per-user") -> tuple[float, float]:
    num, den, _ = nmse_terms(estimates, truth, mode)
    lin = num / den
    return lin, to_db(lin)


def _clog2(x: float) -> int:
    return math.ceil(math.log2(x))


def pilot_overhead_proposed(k_users: int, j_paths: int, n_ue: int, m_ris: int, l_paths: float,
                            c_constants=(1.0, 1.0, 1.0)) -> int:
    """c1 K J ceil(log2 N_r) + c2 J ceil(log2 M) + c3 (K-1) J ceil(log2 M) / L - K J, rounded up.

    ``l_paths`` may be ``math.inf``, which drops the third term.
    """
    for name, v in (("k_users", k_users), ("j_paths", j_paths), ("n_ue", n_ue),
                    ("m_ris", m_ris), ("l_paths", l_paths)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    c1, c2, c3 = c_constants
    k, j = k_users, j_paths
    third = 0.0 if math.isinf(l_paths) else c3 * (k - 1) * j * _clog2(m_ris) / l_paths
    value = c1 * k * j * _clog2(n_ue) + c2 * j * _clog2(m_ris) + third - k * j
    out = math.ceil(value - 1e-9)
    if out < 1:
        log.warning("proposed overhead %.3g clamped to 1", value)
        out = 1
    return out


def pilot_overhead_benchmark(k_users: int, q_phases: int, l_paths: int, j_paths: int) -> int:
    """K (1 + Q L J)."""
    if k_users < 1 or q_phases < 0 or l_paths < 0 or j_paths < 0:
        raise ValueError("benchmark overhead arguments must be non-negative (K positive)")
    return int(k_users * (1 + q_phases * l_paths * j_paths))


def complexity_counters(telemetry: dict) -> dict:
    """Operation counts in the form C_init + I_ALS (K_v C_A + C_B).

    ``telemetry`` holds ``virtual_users``, ``als_iterations`` and the raw
    counts recorded by the estimator (``init_*`` entries, ``sparse_solves``,
    ``ls_updates``).
    """
    k_v = int(telemetry.get("virtual_users", 0))
    iters = int(telemetry.get("als_iterations", 0))
    init = {k: int(v) for k, v in telemetry.items() if k.startswith("init_")}
    a = int(telemetry.get("sparse_solves", 0))
    b = int(telemetry.get("ls_updates", 0))
    if a != iters * k_v or b != iters:
        raise ValueError(f"counters inconsistent with {iters} iterations over {k_v} virtual users")
    out = dict(init)
    out.update({
        "init_total": sum(init.values()),
        "als_iterations": iters,
        "virtual_users": k_v,
        "step_a_solves": a,
        "step_b_solves": b,
        "total_events": sum(init.values()) + iters * (k_v + 1),
    })
    return out
