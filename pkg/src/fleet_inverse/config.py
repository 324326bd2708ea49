"""Numerical knobs with scale-aware defaults.

Every tolerance lives here so that scenario files can override them
uniformly.  Thresholds marked "relative" are multiplied by a problem
scale at the point of use (documented next to each consumer).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass


@dataclass(frozen=True)
class SolverConfig:
    # rank / positive-definiteness gates (relative thresholds)
    rank_rtol: float = 1e-9        # x largest singular value of the incidence matrix
    pd_rtol: float = 1e-9          # x trace(sym gradient)/R
    # differentiation
    fd_step: float = 1e-6          # central-difference step, scaled per coordinate
    # forward solvers
    tol_pg: float = 1e-9           # projected-gradient norm target, x (1 + |F|)
    tol_tie: float = 1e-9          # relative tie window for corner minima
    tol_dd: float = 1e-8           # directional-derivative slack in certificates
    tol_curv: float = 1e-8         # curvature slack for flat directions, x (1 + |F|)
    tol_distinct: float = 1e-6     # minimizers distinct if max|df| exceeds this x scale
    n_starts: int = 20             # random multistart points (on top of vertices)
    n_dirs: int = 50               # random directions sampled by the certificate
    vertex_cap: int = 20000        # refuse corner enumeration beyond this many vertices
    max_pg_iter: int = 5000
    armijo_factor: float = 0.5
    armijo_initial_step: float = 1.0
    armijo_c1: float = 1e-4
    # inverse solver
    tol_vi: float = 1e-8           # VI gap target, x (1 + ||t(q)||_2)
    max_vi_iter: int = 20000
    extragradient_safety: float = 0.9
    # discrete recovery
    discrete_starts: int = 20
    max_outer_iter: int = 300
    image_distance_norm: str = "l2"   # "l2" | "l1" | "linf"
    # two-route equilibrium and mixture search
    ue_tol: float = 1e-10          # bisection residual target on equal expected costs
    tol_p: float = 1e-6            # golden-section tolerance on the mixing probability
    mixture_grid: int = 1001       # verification grid for global optima in p
    # misc
    seed: int = 0
    max_threads: int = 1

    def __post_init__(self):
        if self.image_distance_norm not in ("l2", "l1", "linf"):
            raise ValueError(
                f"image_distance_norm must be one of l2, l1, linf, "
                f"got {self.image_distance_norm!r}"
            )
        if self.max_threads < 1:
            raise ValueError("max_threads must be at least 1")

    def replace(self, **overrides) -> "SolverConfig":
        unknown = set(overrides) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ValueError(f"unknown tolerance fields: {sorted(unknown)}")
        return dataclasses.replace(self, **overrides)


def _threads_from_env() -> int:
    raw = os.environ.get("FLEET_INVERSE_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


DEFAULT_CONFIG = SolverConfig(max_threads=_threads_from_env())
