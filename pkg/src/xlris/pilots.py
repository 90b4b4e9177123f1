"""RIS training patterns and the uplink observation model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelSet, SystemConfig

SCHEMES = ("random-phase", "dft-columns")


@dataclass
class TrainingPattern:
    slots: np.ndarray  # M x tau, column t is the RIS phase vector of slot t
    scheme: str
    tau: int


@dataclass
class ObservationSet:
    """Received BS matrices; ``y[k][t]`` is the N_t x N_r matrix of user k, slot t."""

    y: list[np.ndarray]
    patterns: list[TrainingPattern]
    noise_var: float
    power: float


def generate_training(m: int, tau: int, scheme: str = "random-phase",
                      rng: np.random.Generator | None = None) -> TrainingPattern:
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if scheme == "random-phase":
        if rng is None:
            raise ValueError("random-phase training needs an rng")
        slots = np.exp(1j * rng.uniform(0, 2 * np.pi, (m, tau)))
    elif scheme == "dft-columns":
        if tau > m:
            raise ValueError(f"dft-columns supports at most {m} slots, got {tau}")
        slots = np.exp(-2j * np.pi * np.outer(np.arange(m), np.arange(tau)) / m)
    else:
        raise ValueError(f"unknown training scheme {scheme!r}; expected one of {SCHEMES}")
    return TrainingPattern(slots, scheme, tau)


def synthesize_observations(channels: ChannelSet,
                            pattern: TrainingPattern | Sequence[TrainingPattern],
                            power: float, noise_var: float,
                            rng: np.random.Generator | None = None) -> ObservationSet:
    """Y_{k,t} = sqrt(p) H_BR Diag(e_t) H_RU,k + N_{k,t}.

    A single pattern is shared by all users; a sequence gives one pattern per
    user (users then train in their own slots and may use different tau).
    """
    n_users = len(channels.h_ru)
    patterns = [pattern] * n_users if isinstance(pattern, TrainingPattern) else list(pattern)
    if len(patterns) != n_users:
        raise ValueError(f"{len(patterns)} patterns for {n_users} users")
    if noise_var > 0 and rng is None:
        raise ValueError("noisy observations need an rng")
    m = channels.h_br.shape[1]
    out = []
    for h_ru, pat in zip(channels.h_ru, patterns):
        if pat.slots.shape[0] != m:
            raise ValueError("training pattern length does not match the RIS size")
        # (tau, N_t, N_r): H_BR Diag(e_t) H_RU for every slot at once
        y = np.sqrt(power) * np.einsum("nm,mt,mr->tnr", channels.h_br, pat.slots, h_ru)
        if noise_var > 0:
            y = y + np.sqrt(noise_var / 2) * (rng.standard_normal(y.shape)
                                              + 1j * rng.standard_normal(y.shape))
        out.append(y)
    return ObservationSet(out, patterns, noise_var, power)


def snr_db(config: SystemConfig) -> float:
    """SNR on the scale 10 log10(1e-6 d_BR^-a d_RU^-b p / noise), d_RU at its range midpoint.

    The exponents (a, b) come from ``config.snr_exponents`` and default to
    (2.2, 2.8), which is swapped relative to the gain statistics.
    """
    lo, hi = config.dist_ris_ue_range
    a, b = config.snr_exponents
    arg = 1e-6 * config.dist_bs_ris ** -a * (0.5 * (lo + hi)) ** -b * config.tx_power / config.noise_var
    return 10 * np.log10(arg)


def noise_var_for_snr(config: SystemConfig, target_db: float) -> float:
    lo, hi = config.dist_ris_ue_range
    a, b = config.snr_exponents
    signal = 1e-6 * config.dist_bs_ris ** -a * (0.5 * (lo + hi)) ** -b * config.tx_power
    return signal / 10 ** (target_db / 10)
