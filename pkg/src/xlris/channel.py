"""Hybrid-field channel model: steering vectors, dictionaries and scenario sampling.

The BS-RIS link is a far-field ULA-to-ULA channel and every RIS-user link is a
near-field (spherical-wave) channel. All angles are in radians; steering
generators convert internally through ``spacing * sin(angle) / wavelength``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SPEED_OF_LIGHT = 3e8


def _as_paths(value, n_users: int) -> tuple[int, ...]:
    if np.isscalar(value):
        return (int(value),) * n_users
    return tuple(int(v) for v in value)


@dataclass(frozen=True)
class SystemConfig:
    """Scenario dimensions, geometry, power and noise.

    Spacings left as ``None`` resolve to half a carrier wavelength. A ``None``
    noise variance resolves to the value giving 10 dB on the SNR scale of
    :func:`xlris.pilots.snr_db`.
    """

    n_bs: int = 128
    n_ue: int = 32
    m_ris: int = 256
    n_users: int = 4
    n_bs_paths: int = 3
    n_ue_paths: tuple[int, ...] | int = 2
    carrier_hz: float = 30e9
    spacing_bs: float | None = None
    spacing_ris: float | None = None
    spacing_ue: float | None = None
    tx_power: float = 1.0
    noise_var: float | None = None
    dist_bs_ris: float = 100.0
    dist_ris_ue_range: tuple[float, float] = (1.0, 50.0)
    gain_exponents: tuple[float, float] = (2.8, 2.2)
    snr_exponents: tuple[float, float] = (2.2, 2.8)
    seed: int = 0

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("n_bs", "n_ue", "m_ris", "n_users", "n_bs_paths"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
            set_(self, name, int(getattr(self, name)))
        paths = _as_paths(self.n_ue_paths, self.n_users)
        if len(paths) != self.n_users:
            raise ValueError(
                f"n_ue_paths has {len(paths)} entries for {self.n_users} users")
        if min(paths) < 1:
            raise ValueError("every user needs at least one RIS-user path")
        set_(self, "n_ue_paths", paths)
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")
        half = self.wavelength / 2
        for name in ("spacing_bs", "spacing_ris", "spacing_ue"):
            if getattr(self, name) is None:
                set_(self, name, half)
            elif not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.tx_power > 0:
            raise ValueError("tx_power must be positive")
        if not self.dist_bs_ris > 0:
            raise ValueError("dist_bs_ris must be positive")
        lo, hi = (float(v) for v in self.dist_ris_ue_range)
        if not (0 < lo <= hi):
            raise ValueError(f"dist_ris_ue_range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        set_(self, "dist_ris_ue_range", (lo, hi))
        set_(self, "gain_exponents", tuple(float(v) for v in self.gain_exponents))
        set_(self, "snr_exponents", tuple(float(v) for v in self.snr_exponents))
        if self.noise_var is None:
            mid = 0.5 * (lo + hi)
            a, b = self.snr_exponents
            signal = 1e-6 * self.dist_bs_ris ** -a * mid ** -b * self.tx_power
            set_(self, "noise_var", signal / 10.0)
        elif not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def ris_aperture(self) -> float:
        return (self.m_ris - 1) * self.spacing_ris


@dataclass(frozen=True)
class FarFieldPath:
    gain: complex
    bs_angle: float
    ris_angle: float

    def __post_init__(self):
        for a in (self.bs_angle, self.ris_angle):
            if not 0 <= a < np.pi:
                raise ValueError(f"angle {a} outside [0, pi)")


@dataclass(frozen=True)
class NearFieldPath:
    gain: complex
    ris_angle: float
    ue_angle: float
    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("distance must be positive")
        for a in (self.ris_angle, self.ue_angle):
            if not 0 <= a < np.pi:
                raise ValueError(f"angle {a} outside [0, pi)")


def _check_finite(values):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("steering angle must be finite")
    return arr


def far_field_steering(n: int, spacing: float, wavelength: float, angle,
                       centered: bool = False) -> np.ndarray:
    """ULA far-field response, first element at phase zero.

    ``angle`` may be a scalar (returns a length-``n`` vector) or an array of
    angles (returns an ``n x len(angle)`` matrix). With ``centered=True`` the
    phase reference moves to the array centre, which is the limit of
    :func:`near_field_steering` for an infinitely distant source.
    """
    if n < 1 or not spacing > 0 or not wavelength > 0:
        raise ValueError("need n >= 1 and positive spacing / wavelength")
    ang = _check_finite(angle)
    idx = np.arange(n, dtype=float)
    if centered:
        idx = idx - (n - 1) / 2
    phase = 2 * np.pi * spacing / wavelength * np.outer(idx, np.sin(np.atleast_1d(ang)))
    out = np.exp(1j * phase)
    return out[:, 0] if ang.ndim == 0 else out


def spatial_frequency_steering(n: int, freq) -> np.ndarray:
    """Response ``exp(j 2 pi i freq)`` for normalized spatial frequencies."""
    f = _check_finite(freq)
    out = np.exp(2j * np.pi * np.outer(np.arange(n), np.atleast_1d(f)))
    return out[:, 0] if f.ndim == 0 else out


def element_offsets(m: int, spacing: float) -> np.ndarray:
    """Positions of the elements relative to the array centre."""
    return (np.arange(m) - (m - 1) / 2) * spacing


def near_field_steering(m: int, spacing: float, wavelength: float, angle, distance) -> np.ndarray:
    """Spherical-wave response of a centred ULA to a source at (angle, distance).

    Scalar inputs give a length-``m`` vector; arrays of equal length give an
    ``m x len`` matrix, one column per (angle, distance) pair.
    """
    ang = _check_finite(angle)
    dist = np.asarray(distance, dtype=float)
    if np.any(~(dist > 0)):
        raise ValueError("distance must be positive")
    d = element_offsets(m, spacing)
    if np.any(dist <= np.abs(d).max()):
        raise ValueError("source must lie beyond the array extent")
    r = np.atleast_1d(dist)[None, :]
    s = np.sin(np.atleast_1d(ang))[None, :]
    dm = d[:, None]
    rm = np.sqrt(r ** 2 + dm ** 2 - 2 * r * dm * s)
    # r_m - r without cancellation at large r
    delta = (dm ** 2 - 2 * r * dm * s) / (rm + r)
    out = np.exp(-2j * np.pi * delta / wavelength)
    return out[:, 0] if ang.ndim == 0 and dist.ndim == 0 else out


def rayleigh_distance(aperture: float, wavelength: float) -> float:
    if not aperture > 0 or not wavelength > 0:
        raise ValueError("aperture and wavelength must be positive")
    return 2 * aperture ** 2 / wavelength


@dataclass
class AngularDictionary:
    atoms: np.ndarray
    grid_angles: np.ndarray

    @property
    def grid_sines(self) -> np.ndarray:
        return np.sin(self.grid_angles)

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


@dataclass
class PolarDictionary:
    """Overcomplete angle x distance dictionary.

    ``grid_distances`` holds ``inf`` for the far-field ring, whose columns are
    centred far-field steering vectors.
    """

    atoms: np.ndarray
    grid_angles: np.ndarray
    grid_distances: np.ndarray

    @property
    def grid(self) -> list[tuple[float, float]]:
        return list(zip(self.grid_angles.tolist(), self.grid_distances.tolist()))

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def ring_distances(self) -> np.ndarray:
        return np.unique(self.grid_distances)[::-1]

    def far_field_only(self) -> "PolarDictionary":
        keep = np.isinf(self.grid_distances)
        return PolarDictionary(self.atoms[:, keep], self.grid_angles[keep],
                               self.grid_distances[keep])


def sine_grid(size: int) -> np.ndarray:
    """``size`` sines uniformly covering [-1, 1)."""
    return -1 + 2 * np.arange(size) / size


def build_angular_dictionary(n: int, d_size: int, spacing: float, wavelength: float) -> AngularDictionary:
    if d_size < n:
        raise ValueError(f"dictionary size {d_size} is under-complete for {n} antennas")
    angles = np.arcsin(sine_grid(d_size))
    return AngularDictionary(far_field_steering(n, spacing, wavelength, angles), angles)


def polar_ring_distances(m: int, spacing: float, wavelength: float, beta_delta: float,
                         min_distance: float) -> np.ndarray:
    """Finite ring distances ``aperture^2 / (2 lambda beta^2 s)`` for s = 1, 2, ...

    Rings closer than ``min_distance`` or inside the array extent are dropped.
    """
    if not beta_delta > 0:
        raise ValueError("beta_delta must be positive")
    aperture = (m - 1) * spacing
    base = aperture ** 2 / (2 * wavelength * beta_delta ** 2)
    out = []
    s = 1
    while base / s >= min_distance and base / s > aperture / 2:
        out.append(base / s)
        s += 1
    return np.asarray(out)


def build_polar_dictionary(m: int, spacing: float, wavelength: float, angle_count: int,
                           beta_delta: float = 1.2, min_distance: float = 1.0) -> PolarDictionary:
    """Polar-domain dictionary: one far-field ring plus the finite distance rings.

    Columns are ring-major: the first ``angle_count`` columns form the
    far-field ring, followed by each finite ring from far to near.
    """
    if angle_count < m:
        raise ValueError(f"angle_count {angle_count} below array size {m}")
    angles = np.arcsin(sine_grid(angle_count))
    rings = polar_ring_distances(m, spacing, wavelength, beta_delta, min_distance)
    blocks = [far_field_steering(m, spacing, wavelength, angles, centered=True)]
    for r in rings:
        blocks.append(near_field_steering(m, spacing, wavelength, angles, np.full(angle_count, r)))
    n_rings = len(rings) + 1
    return PolarDictionary(
        atoms=np.hstack(blocks),
        grid_angles=np.tile(angles, n_rings),
        grid_distances=np.concatenate([np.full(angle_count, np.inf)]
                                      + [np.full(angle_count, r) for r in rings]),
    )


def polar_atom(m: int, spacing: float, wavelength: float, angle: float, distance: float) -> np.ndarray:
    if np.isinf(distance):
        return far_field_steering(m, spacing, wavelength, angle, centered=True)
    return near_field_steering(m, spacing, wavelength, angle, distance)


@dataclass
class ChannelSet:
    """One channel realization with its generating path parameters."""

    h_br: np.ndarray
    h_ru: list[np.ndarray]
    paths_br: list[FarFieldPath]
    paths_ru: list[list[NearFieldPath]]
    config: SystemConfig = field(repr=False)

    @cached_property
    def g_true(self) -> list[list[np.ndarray]]:
        return [[self.h_br * h[:, n][None, :] for n in range(h.shape[1])] for h in self.h_ru]

    def cascaded(self, k: int, n: int) -> np.ndarray:
        return self.h_br * self.h_ru[k][:, n][None, :]

    def rebuild_h_br(self) -> np.ndarray:
        c = self.config
        out = np.zeros((c.n_bs, c.m_ris), dtype=complex)
        for p in self.paths_br:
            a_bs = far_field_steering(c.n_bs, c.spacing_bs, c.wavelength, p.bs_angle)
            a_ris = far_field_steering(c.m_ris, c.spacing_ris, c.wavelength, p.ris_angle)
            out += p.gain * np.outer(a_bs, a_ris.conj())
        return out

    def rebuild_h_ru(self, k: int) -> np.ndarray:
        c = self.config
        out = np.zeros((c.m_ris, c.n_ue), dtype=complex)
        for p in self.paths_ru[k]:
            b = polar_atom(c.m_ris, c.spacing_ris, c.wavelength, p.ris_angle, p.distance)
            a_ue = far_field_steering(c.n_ue, c.spacing_ue, c.wavelength, p.ue_angle)
            out += p.gain * np.outer(b, a_ue.conj())
        return out

    def ris_angle_for(self, bs_angle: float) -> float:
        """RIS-side angle of the BS-RIS path whose BS angle is closest to ``bs_angle``.

        Closeness is measured on the wrapped BS spatial frequency, so it is
        insensitive to the arcsin branch of an estimate.
        """
        c = self.config
        nu = c.spacing_bs / c.wavelength * np.sin(bs_angle)
        best, best_gap = 0, np.inf
        for i, p in enumerate(self.paths_br):
            gap = nu - c.spacing_bs / c.wavelength * np.sin(p.bs_angle)
            gap = abs(gap - np.round(gap)) if np.isclose(c.spacing_bs, c.wavelength / 2) else abs(gap)
            if gap < best_gap:
                best, best_gap = i, gap
        return self.paths_br[best].ris_angle


def _cn(rng: np.random.Generator, var: float, size=None):
    return np.sqrt(var / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_scenario(config: SystemConfig, rng: np.random.Generator, on_grid: bool = False,
                    ue_dict: AngularDictionary | None = None,
                    ris_dict: PolarDictionary | None = None) -> ChannelSet:
    """Draw one channel realization.

    Gains follow CN(0, 1e-3 d^-exponent) with per-path RIS-user distances
    drawn uniformly from ``config.dist_ris_ue_range``; angles are uniform on
    [0, pi).

    With ``on_grid=True`` every parameter is snapped so that noiseless
    recovery is exact: BS and RIS far-field angles sit on distinct DFT bins
    (mutually orthogonal), user-side angles on distinct, mutually orthogonal
    points of ``ue_dict``, and each near-field (angle, distance) pair is a
    column of ``ris_dict`` with non-negative sine. Both dictionaries are
    required in that mode.
    """
    c = config
    lam = c.wavelength
    lo, hi = c.dist_ris_ue_range
    var_br = 1e-3 * c.dist_bs_ris ** -c.gain_exponents[0]

    if on_grid:
        if ue_dict is None or ris_dict is None:
            raise ValueError("on-grid sampling needs the user and RIS dictionaries")
        bs_angles = _orthogonal_dft_angles(c.n_bs, c.n_bs_paths, rng)
        ris_angles = _orthogonal_dft_angles(c.m_ris, c.n_bs_paths, rng)
    else:
        bs_angles = rng.uniform(0, np.pi, c.n_bs_paths)
        ris_angles = rng.uniform(0, np.pi, c.n_bs_paths)
    gains_br = _cn(rng, var_br, c.n_bs_paths)
    paths_br = [FarFieldPath(complex(g), float(a), float(w))
                for g, a, w in zip(gains_br, bs_angles, ris_angles)]
    a_bs = far_field_steering(c.n_bs, c.spacing_bs, lam, np.asarray(bs_angles))
    a_ris = far_field_steering(c.m_ris, c.spacing_ris, lam, np.asarray(ris_angles))
    h_br = (a_bs * gains_br[None, :]) @ a_ris.conj().T

    h_ru, paths_ru = [], []
    for k in range(c.n_users):
        jk = c.n_ue_paths[k]
        if on_grid:
            ue_angles = _orthogonal_grid_angles(ue_dict, c.n_ue, jk, rng)
            cols = _pick_polar_columns(ris_dict, jk, lo, hi, rng)
            ris_ang = ris_dict.grid_angles[cols]
            dists = ris_dict.grid_distances[cols]
            gain_dist = np.where(np.isinf(dists), hi, dists)
            b = ris_dict.atoms[:, cols]
        else:
            ue_angles = rng.uniform(0, np.pi, jk)
            ris_ang = rng.uniform(0, np.pi, jk)
            dists = rng.uniform(lo, hi, jk)
            gain_dist = dists
            b = near_field_steering(c.m_ris, c.spacing_ris, lam, ris_ang, dists)
        gains = _cn(rng, 1.0, jk) * np.sqrt(1e-3 * gain_dist ** -c.gain_exponents[1])
        a_ue = far_field_steering(c.n_ue, c.spacing_ue, lam, np.asarray(ue_angles))
        h_ru.append((b * gains[None, :]) @ a_ue.conj().T)
        paths_ru.append([
            NearFieldPath(complex(g), float(p), float(z), float(d))
            for g, p, z, d in zip(gains, ris_ang, ue_angles, dists)
        ])
    return ChannelSet(h_br, h_ru, paths_br, paths_ru, config)


def _orthogonal_dft_angles(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Angles whose sines are distinct multiples of 2/n in [0, 1)."""
    bins = n // 2
    if count > bins:
        raise ValueError(f"cannot place {count} orthogonal paths on a {n}-element array")
    k = rng.choice(bins, size=count, replace=False)
    return np.arcsin(2 * k / n)


def _orthogonal_grid_angles(dictionary: AngularDictionary, n: int, count: int,
                            rng: np.random.Generator) -> np.ndarray:
    sines = dictionary.grid_sines
    # grid points with sine in [0, 1) that are multiples of 2/n are mutually orthogonal
    mult = np.round(sines * n / 2)
    ok = np.flatnonzero((sines >= 0) & np.isclose(sines * n / 2, mult))
    if count > ok.size:
        raise ValueError("not enough orthogonal user-side grid points")
    return dictionary.grid_angles[rng.choice(ok, size=count, replace=False)]


def _pick_polar_columns(dictionary: PolarDictionary, count: int, lo: float, hi: float,
                        rng: np.random.Generator) -> np.ndarray:
    sines = np.sin(dictionary.grid_angles)
    d = dictionary.grid_distances
    ok = np.flatnonzero((sines >= 0) & np.isfinite(d) & (d >= lo) & (d <= hi))
    if ok.size < count:
        ok = np.flatnonzero((sines >= 0) & np.isfinite(d))
    if ok.size < count:
        ok = np.flatnonzero(sines >= 0)
    return rng.choice(ok, size=count, replace=False)
