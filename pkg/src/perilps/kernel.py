"""Radial influence kernels and material parameters.

The solver only ever needs the weighted-volume-normalized kernel density
K_delta(r)/m(delta), so that ratio is what this module exposes.  Two
families are supported: a constant profile on the interaction ball and a
1/r profile.  The dimension-dependent scaling constants c_a, c_b make the
nonlocal operators reproduce the Navier operator in the local limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONSTANT = "constant"
INVERSE_R = "inverse-r"
FAMILIES = (CONSTANT, INVERSE_R)

# (c_a, c_b) per spatial dimension.
_SCALING = {2: (2.0, 16.0), 3: (3.0, 30.0)}

# Support cut r <= delta*(1 + SUPPORT_SLACK).  Must cover the neighbor-list
# inclusion slack (geometry.REL_TOL): a node kept in the delta-ball list has
# to see a live kernel value, or quadrature exactness silently breaks on
# stencils with nodes exactly on the interaction sphere.
SUPPORT_SLACK = 1e-9


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, horizon and dimension, with derived scaling constants.

    Immutable after construction; evaluations are pure functions and safe
    for unrestricted concurrent use.
    """

    family: str
    delta: float
    dim: int = 2
    c_a: float = field(init=False)
    c_b: float = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.delta <= 0.0:
            raise KernelError(f"horizon must be positive, got {self.delta}")
        if self.dim not in _SCALING:
            raise KernelError(f"dimension {self.dim} unsupported (2 or 3)")
        c_a, c_b = _SCALING[self.dim]
        object.__setattr__(self, "c_a", c_a)
        object.__setattr__(self, "c_b", c_b)

    @property
    def norm_constant(self) -> float:
        """Radius-independent factor of the normalized density K/m."""
        d, dim = self.delta, self.dim
        if dim == 2:
            return 2.0 / (np.pi * d**4) if self.family == CONSTANT else 3.0 / (2.0 * np.pi * d**3)
        return 5.0 / (4.0 * np.pi * d**5) if self.family == CONSTANT else 1.0 / (np.pi * d**4)


def kernel_scalar(spec: KernelSpec, r):
    """Normalized density K_delta(r)/m(delta); zero outside the horizon.

    The InverseR family diverges at r = 0; that point never occurs in the
    neighbor sums (self-pairs are excluded), so a direct query raises.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise KernelError("kernel radius must be nonnegative")
    inside = r <= spec.delta * (1.0 + SUPPORT_SLACK)
    if spec.family == CONSTANT:
        out = np.where(inside, spec.norm_constant, 0.0)
    else:
        if np.any(inside & (r == 0.0)):
            raise KernelError("inverse-r kernel density is singular at r = 0")
        with np.errstate(divide="ignore"):
            out = np.where(inside, spec.norm_constant / np.where(r > 0, r, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_vector(spec: KernelSpec, z):
    """Vector kernel [K_delta(|z|)/m(delta)] z, antisymmetric in z.

    For InverseR the 1/r cancels one power of |z|: the magnitude is the
    constant norm_constant throughout the support, and z = 0 maps to the
    zero vector (removable, measure-zero point).
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    r = np.linalg.norm(zz, axis=1)
    inside = r <= spec.delta * (1.0 + SUPPORT_SLACK)
    if spec.family == CONSTANT:
        scale = np.where(inside, spec.norm_constant, 0.0)
        out = zz * scale[:, None]
    else:
        safe = np.where(r > 0, r, 1.0)
        scale = np.where(inside & (r > 0), spec.norm_constant / safe, 0.0)
        out = zz * scale[:, None]
    return out[0] if single else out


def second_moment_target(dim: int) -> np.ndarray:
    """Continuum value of (c_b/m) int K z (x) z (x) z (x) z / |z|^2 over the ball.

    Equals 2 (I(x)I + 2 I_sym); contracting with d2u/2 yields the deviatoric
    local limit Laplacian(u) + 2 grad(div u) for either kernel family.
    """
    eye = np.eye(dim)
    t = (
        np.einsum("ij,kl->ijkl", eye, eye)
        + np.einsum("ik,jl->ijkl", eye, eye)
        + np.einsum("il,jk->ijkl", eye, eye)
    )
    return 2.0 * t


def check_normalization(spec: KernelSpec, cloud, rule, node: int):
    """Residuals of the discrete moment identities at one node.

    Returns (res_a, res_b) with
      res_a = || c_a * sum_j kappa z (x) z w  -  I ||_max
      res_b = || c_b * sum_j kappa z (x) z (x) z (x) z / |z|^2 w  -  target ||_max
    where kappa = K/m and target = second_moment_target(dim).  Diagnostic
    only: a node with a truncated neighborhood shows an O(1) residual.
    """
    js = cloud.neighbor_indices(node)
    w = rule.weights_for(node)
    z = cloud.points[js] - cloud.points[node]
    r = np.linalg.norm(z, axis=1)
    kappa = kernel_scalar(spec, r)
    m2 = np.einsum("j,ja,jb->ab", kappa * w, z, z)
    res_a = np.max(np.abs(spec.c_a * m2 - np.eye(spec.dim)))
    inv_r2 = 1.0 / r**2
    m4 = np.einsum("j,ja,jb,jc,jd->abcd", kappa * w * inv_r2, z, z, z, z)
    res_b = np.max(np.abs(spec.c_b * m4 - second_moment_target(spec.dim)))
    return res_a, res_b


@dataclass(frozen=True)
class Material:
    """Plane-strain isotropic material: Lame parameters from (E, nu)."""

    young: float = 1.0
    poisson: float = 0.3
    density: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.poisson < 0.5:
            raise KernelError(f"plane strain requires 0 < nu < 1/2, got {self.poisson}")
        if self.young <= 0.0:
            raise KernelError("Young's modulus must be positive")

    @property
    def lam(self) -> float:
        e, nu = self.young, self.poisson
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def mu(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))
