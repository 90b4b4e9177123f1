"""End-to-end two-stage cascaded channel estimator."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Callable

from .channel import (AngularDictionary, PolarDictionary, SystemConfig, build_angular_dictionary,
                      build_polar_dictionary)
from .pilots import ObservationSet
from .stage1 import (Stage1Result, VirtualUserSet, aggregate_observations, build_virtual_users,
                     estimate_user_support, run_stage1)
from .stage2 import AlsState, FinalEstimates, finalize_estimates, run_als


@dataclass(frozen=True)
class EstimatorOptions:
    ue_dict_factor: int = 4          # D_U = factor * N_r
    polar_angle_factor: int = 2      # angle grid = factor * M
    beta_delta: float = 1.2
    polar_min_distance: float | None = None  # None: lower end of the RIS-user range
    virtual_sparsity: int = 1
    lookahead: int = 4
    als_iters: int = 3
    rel_tol: float = 1e-4
    warm_start: bool = True
    projection: str = "matched"
    operator_init: str = "pinv"
    l_hat: int | None = None         # None: known L from the config
    detect_paths: bool = False
    peak_threshold: float = 0.05
    bs_refine_grid: int = 64
    offset_grid: int = 1024
    offset_refine: int = 3
    noiseless_tol: float = 1e-6

    def __post_init__(self):
        if self.ue_dict_factor < 1 or self.polar_angle_factor < 1:
            raise ValueError("dictionary oversampling factors must be >= 1")
        if self.virtual_sparsity < 1 or self.lookahead < 1:
            raise ValueError("virtual_sparsity and lookahead must be >= 1")
        if self.als_iters < 0:
            raise ValueError("als_iters must be >= 0")
        if self.projection not in ("matched", "ls"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.operator_init not in ("pinv", "angle-gain"):
            raise ValueError(f"unknown operator_init {self.operator_init!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorOptions":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(sorted(unknown)[0])
        return cls(**data)


@dataclass
class Dictionaries:
    ue: AngularDictionary
    ris: PolarDictionary


def build_dictionaries(config: SystemConfig, options: EstimatorOptions,
                       far_field: bool = False) -> Dictionaries:
    lam = config.wavelength
    ue = build_angular_dictionary(config.n_ue, options.ue_dict_factor * config.n_ue,
                                  config.spacing_ue, lam)
    min_d = options.polar_min_distance
    if min_d is None:
        min_d = config.dist_ris_ue_range[0]
    ris = build_polar_dictionary(config.m_ris, config.spacing_ris, lam,
                                 options.polar_angle_factor * config.m_ris,
                                 options.beta_delta, min_d)
    if far_field:
        ris = ris.far_field_only()
    return Dictionaries(ue, ris)


@dataclass
class EstimatorRun:
    estimates: FinalEstimates
    stage1: Stage1Result
    als: AlsState
    telemetry: dict
    virtual: VirtualUserSet


def estimate(observations: ObservationSet, config: SystemConfig, dictionaries: Dictionaries,
             omega_lookup: Callable[[float], float], options: EstimatorOptions = EstimatorOptions(),
             noiseless: bool = False, als_iters: int | None = None) -> EstimatorRun:
    """Run Stage I on the typical virtual user, then ALS over all virtual users."""
    opts = options if als_iters is None else replace(options, als_iters=als_iters)
    tol = opts.noiseless_tol if noiseless else None
    supports, steering = [], []
    for k in range(config.n_users):
        y_agg = aggregate_observations(observations.y[k])
        sup, a_ue = estimate_user_support(y_agg, dictionaries.ue, config.n_ue_paths[k])
        supports.append(sup)
        steering.append(a_ue)
    virtual = build_virtual_users(observations.y, steering, supports,
                                  [p.slots for p in observations.patterns])
    l_hat = None if opts.detect_paths else (opts.l_hat or config.n_bs_paths)
    s1 = run_stage1(virtual, l_hat, omega_lookup, dictionaries.ris, observations.power,
                    config.spacing_bs, config.spacing_ris, config.wavelength,
                    j1=opts.virtual_sparsity, lookahead=opts.lookahead,
                    projection=opts.projection, operator_init=opts.operator_init,
                    refine_grid=opts.bs_refine_grid, offset_grid=opts.offset_grid,
                    offset_refine=opts.offset_refine, threshold=opts.peak_threshold, tol=tol)
    als = run_als(virtual, s1.bs_steering, s1.initial_operator, dictionaries.ris.atoms,
                  opts.virtual_sparsity, opts.als_iters, opts.rel_tol, observations.power,
                  opts.lookahead, opts.projection, opts.warm_start, tol=tol)
    est = finalize_estimates(als, s1.bs_steering, virtual, config.n_users)
    telemetry = {
        "init_user_support_solves": config.n_users,
        "init_reference_solves": 1,
        "init_sparse_solves": als.counters["init_sparse_solves"],
        "sparse_solves": als.counters["sparse_solves"],
        "ls_updates": als.counters["ls_updates"],
        "virtual_users": virtual.count,
        "als_iterations": als.iteration,
    }
    return EstimatorRun(est, s1, als, telemetry, virtual)
