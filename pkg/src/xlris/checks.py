"""Self-contained invariant checks behind ``xlris validate``."""
from __future__ import annotations

import numpy as np

from .channel import far_field_steering, near_field_steering
from .harness import preset, run_experiment
from .metrics import pilot_overhead_benchmark, pilot_overhead_proposed
from .sparse import laomp, omp
from .stage2 import build_sensing, khatri_rao, vec


def check_khatri_rao(rng, shapes: int = 100) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(shapes):
        l, m, t = rng.integers(1, 9, size=3)
        s = rng.standard_normal((l, m)) + 1j * rng.standard_normal((l, m))
        e = rng.standard_normal((m, t)) + 1j * rng.standard_normal((m, t))
        h = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        lhs = vec(s @ (h[:, None] * e))
        rhs = khatri_rao(e.T, s) @ h
        worst = max(worst, np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
    return worst < 1e-12, f"max relative error {worst:.2e} over {shapes} shapes"


def check_near_field_limit(rng, count: int = 50) -> tuple[bool, str]:
    lam = 0.01
    worst = 0.0
    for a in rng.uniform(0, np.pi, count):
        near = near_field_steering(32, lam / 2, lam, a, 1e6 * lam)
        far = far_field_steering(32, lam / 2, lam, a, centered=True)
        worst = max(worst, float(np.abs(np.angle(near * far.conj())).max()))
    return worst < 1e-3, f"max phase deviation {worst:.2e} rad at r = 1e6 wavelengths"


def check_gauge(rng) -> tuple[bool, str]:
    l, m, t, d = 2, 16, 12, 40
    s = rng.standard_normal((l, m)) + 1j * rng.standard_normal((l, m))
    e = np.exp(1j * rng.uniform(0, 2 * np.pi, (m, t)))
    atoms = np.exp(1j * rng.uniform(0, 2 * np.pi, (m, d)))
    worst = 0.0
    for c in (2.0, 1j):
        base = build_sensing(e, s, atoms)
        scaled = build_sensing(e, c * s, atoms) / c
        worst = max(worst, np.linalg.norm(base - scaled) / np.linalg.norm(base))
    return worst < 1e-12, f"max relative change {worst:.2e}"


def check_overheads() -> tuple[bool, str]:
    prop = pilot_overhead_proposed(4, 1, 32, 256, 3)
    bench = [pilot_overhead_benchmark(4, 24, 3, j) for j in range(1, 7)]
    ok = prop == 32 and bench == [292, 580, 868, 1156, 1444, 1732]
    return ok, f"proposed(J=1)={prop}, benchmark={bench}"


def check_lookahead_one(rng, instances: int = 50) -> tuple[bool, str]:
    same = 0
    for _ in range(instances):
        a = rng.standard_normal((12, 20)) + 1j * rng.standard_normal((12, 20))
        y = a[:, rng.choice(20, 2, replace=False)] @ (rng.standard_normal(2) + 1j)
        o, la = omp(a, y, 2), laomp(a, y, 2, lookahead=1)
        same += o.support == la.support and np.array_equal(o.coeffs, la.coeffs)
    return same == instances, f"{same}/{instances} identical"


def check_exact_oracle() -> tuple[bool, str]:
    rows = run_experiment(preset("exact-oracle"))
    worst = max(r.nmse_db for r in rows)
    return worst < -60, f"worst NMSE {worst:.1f} dB"


def run_checks(quick: bool = False, seed: int = 1) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = [
        ("khatri-rao identity", *check_khatri_rao(rng)),
        ("near-field limit", *check_near_field_limit(rng)),
        ("gauge invariance", *check_gauge(rng)),
        ("overhead formulas", *check_overheads()),
        ("look-ahead 1 equals OMP", *check_lookahead_one(rng)),
    ]
    if not quick:
        out.append(("noiseless exact recovery", *check_exact_oracle()))
    return out
