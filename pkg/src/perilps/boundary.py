"""Dirichlet extension strategies populating the exterior collar.

Three ways to turn local boundary data into volumetric collar data:

  smooth    u_D(x) = u0(t, x)                   exact extension given
  constant  u_D(x) = u0(t, xbar)                naive fictitious nodes
  linear    u_D(x) = 2 u0(t, xbar) - u(mirror)  mirror-based fictitious nodes

with xbar the analytic boundary projection of x.  The linear strategy
returns an affine relation: a constant part plus a coefficient -1 coupling
to the interior mirror partner, which assembly folds into the system.
Plans are immutable for a given time; evaluations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Domain, PointCloud

SMOOTH = "smooth"
CONSTANT = "constant"
LINEAR = "linear"
STRATEGIES = (SMOOTH, CONSTANT, LINEAR)


class BoundaryError(ValueError):
    pass


def project_boundary(domain: Domain, x) -> np.ndarray:
    """Closest boundary point; square corner regions map to the corner."""
    single = np.asarray(x).ndim == 1
    proj = domain.project_boundary(x)
    return proj[0] if single else proj


@dataclass(frozen=True)
class BoundaryPlan:
    """Extension strategy plus the local data u0: (t, points) -> (n, 2)."""

    strategy: str
    local_data: object

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise BoundaryError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def exterior_constants(self, t: float, cloud: PointCloud) -> np.ndarray:
        """Known part of u_D at the exterior nodes, in exterior-node order."""
        ext = cloud.points[~cloud.inside]
        if self.strategy == SMOOTH:
            return np.asarray(self.local_data(t, ext), dtype=float)
        proj = cloud.domain.project_boundary(ext)
        vals = np.asarray(self.local_data(t, proj), dtype=float)
        return 2.0 * vals if self.strategy == LINEAR else vals

    def partner_indices(self, cloud: PointCloud) -> np.ndarray:
        """Interior mirror partner per exterior node (linear strategy only)."""
        if self.strategy != LINEAR:
            raise BoundaryError("mirror partners are only defined for the linear strategy")
        if not cloud.mirror or cloud.mirror_partner is None:
            raise BoundaryError("linear extension requires a cloud built with mirror=True")
        partners = cloud.mirror_partner[~cloud.inside]
        if np.any(partners < 0):
            bad = int(np.nonzero(~cloud.inside)[0][np.argmin(partners)])
            raise BoundaryError(f"exterior node {bad} has no mirror partner")
        return partners


def smooth_extension_values(plan: BoundaryPlan, t: float, cloud: PointCloud) -> np.ndarray:
    return BoundaryPlan(SMOOTH, plan.local_data).exterior_constants(t, cloud)


def constant_extension_values(plan: BoundaryPlan, t: float, cloud: PointCloud) -> np.ndarray:
    return BoundaryPlan(CONSTANT, plan.local_data).exterior_constants(t, cloud)


def linear_extension_plan(plan: BoundaryPlan, t: float, cloud: PointCloud):
    """Constant part 2 u0(t, xbar) and partner indices (coupling coefficient -1)."""
    lin = BoundaryPlan(LINEAR, plan.local_data)
    return lin.exterior_constants(t, cloud), lin.partner_indices(cloud)
