"""Optimization-based quadrature weights for the neighbor sums.

Per node i the weights w_{j,i} are the minimum-norm solution of the
reproducing constraints

    sum_j p(x_j - x_i)/|x_j - x_i|^3 w_{j,i} = int_{B_delta} p(z)/|z|^3 dz

for every quintic monomial p = z^alpha whose singular integrand is
absolutely integrable (|alpha| >= 2 in 2D, 18 constraints).  The right-hand
sides come from the closed-form polar moments below.  Constraints are
solved through the normal equations of the KKT system with an SVD of B B^T
(rank tolerance 1e-10 * sigma_max), which is dense, exact and deterministic
at this size.

Nodes whose neighborhoods are congruent after rotation into their canonical
local frame share one solve: the reproducing space is rotation invariant as
a set and the minimum-norm solution is unique, so the weights transfer
verbatim.  Centro-symmetric stencils are antipodally symmetrized, which
keeps all constraints satisfied (odd moments vanish) and stays in the row
space, hence still yields the unique minimizer; this is what makes patch
tests exact for the constant kernel as well.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from math import gamma

import numpy as np

from .geometry import PointCloud

MAX_DEGREE = 5
SINGULARITY_POWER = 3
RANK_TOL = 1e-10
RESIDUAL_TOL = 1e-10
_KEY_DECIMALS = 6


class QuadratureError(RuntimeError):
    pass


def monomial_basis(dim: int = 2):
    """Multi-indices alpha with |alpha| up to 5 whose z^alpha/|z|^3 is integrable."""
    if dim != 2:
        raise QuadratureError("reproducing basis implemented for 2D")
    basis = []
    for total in range(2, MAX_DEGREE + 1):
        for a in range(total, -1, -1):
            basis.append((a, total - a))
    return basis


def exact_moment(alpha, delta: float, dim: int = 2) -> float:
    """Closed form of int_{B_delta} z^alpha / |z|^3 dz.

    Polar factorization: radial part delta^(|a|+d-3)/(|a|+d-3) and the
    sphere average of zhat^alpha, which is zero unless every exponent is
    even and otherwise 2 prod Gamma((a_i+1)/2) / Gamma((|a|+d)/2).
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dim:
        raise QuadratureError(f"multi-index {alpha} does not match dimension {dim}")
    if any(a < 0 for a in alpha):
        raise QuadratureError(f"negative exponent in {alpha}")
    total = sum(alpha)
    if total + dim - 3 < 1:
        raise QuadratureError(
            f"z^{alpha}/|z|^3 is not integrable over the ball in {dim}D (|alpha| < {4 - dim})")
    if any(a % 2 for a in alpha):
        return 0.0
    angular = 2.0 * np.prod([gamma((a + 1) / 2.0) for a in alpha]) / gamma((total + dim) / 2.0)
    radial = delta ** (total + dim - 3) / (total + dim - 3)
    return float(radial * angular)


def _constraint_rows(offsets: np.ndarray, delta: float, basis):
    """Scaled constraint matrix and right-hand side for one neighborhood.

    Rows are rescaled by delta^(3-|alpha|) so all entries are O(1); the
    feasible set, and with it the minimum-norm solution, is unchanged.
    """
    r = np.linalg.norm(offsets, axis=1)
    inv_r3 = r ** (-3.0)
    b = np.empty((len(basis), len(offsets)))
    g = np.empty(len(basis))
    for row, alpha in enumerate(basis):
        scale = delta ** (3 - sum(alpha))
        b[row] = offsets[:, 0] ** alpha[0] * offsets[:, 1] ** alpha[1] * inv_r3 * scale
        g[row] = exact_moment(alpha, delta) * scale
    return b, g


def _antipodal_permutation(offsets: np.ndarray):
    """Index permutation mapping each offset to its negation, or None."""
    key = {tuple(row): i for i, row in enumerate(np.round(offsets, 9))}
    perm = np.empty(len(offsets), dtype=np.int64)
    for i, row in enumerate(np.round(-offsets, 9)):
        j = key.get(tuple(row))
        if j is None:
            return None
        perm[i] = j
    return perm


def _solve_min_norm(offsets: np.ndarray, delta: float, basis):
    """Minimum-norm weights with effective rank and condition diagnostic."""
    b, g = _constraint_rows(offsets, delta, basis)
    m = b @ b.T
    u, s, vt = np.linalg.svd(m)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    lam = vt[:rank].T @ ((u[:, :rank].T @ g) / s[:rank])
    w = b.T @ lam
    perm = _antipodal_permutation(offsets)
    if perm is not None:
        w = 0.5 * (w + w[perm])
    cond = float(np.sqrt(s[0] / s[rank - 1])) if s[rank - 1] > 0 else np.inf
    residual = float(np.max(np.abs(b @ w - g)))
    gnorm = float(np.max(np.abs(g)))
    return w, rank, cond, residual, gnorm


@dataclass
class QuadratureRule:
    """Per-node weights aligned with the cloud's neighbor CSR structure."""

    delta: float
    indptr: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    has_weights: np.ndarray
    rank: np.ndarray
    cond: np.ndarray

    def weights_for(self, i: int) -> np.ndarray:
        if not self.has_weights[i]:
            raise QuadratureError(f"no quadrature weights computed for node {i}")
        return self.weights[self.indptr[i]:self.indptr[i + 1]]


def _local_offsets(cloud: PointCloud, i: int, js: np.ndarray) -> np.ndarray:
    z = cloud.points[js] - cloud.points[i]
    if cloud.frame_angles is None:
        return z
    c, s = np.cos(cloud.frame_angles[i]), np.sin(cloud.frame_angles[i])
    return np.stack([c * z[:, 0] + s * z[:, 1], -s * z[:, 0] + c * z[:, 1]], axis=1)


def compute_weights(cloud: PointCloud, node: int):
    """Weights, effective rank and conditioning for a single node."""
    js = cloud.neighbor_indices(node)
    if len(js) == 0:
        raise QuadratureError(f"node {node} has an empty neighborhood")
    basis = monomial_basis()
    z = _local_offsets(cloud, node, js)
    w, rank, cond, residual, gnorm = _solve_min_norm(z, cloud.delta, basis)
    if residual > RESIDUAL_TOL * gnorm:
        raise QuadratureError(
            f"reproducing constraints infeasible at node {node} "
            f"({len(js)} neighbors, residual {residual:.3e} vs {RESIDUAL_TOL * gnorm:.3e}); "
            "is delta/h too small?")
    return w, rank, cond


def build_rule(cloud: PointCloud, nodes=None) -> QuadratureRule:
    """Quadrature weights for all nodes where the discrete sums are evaluated.

    Defaults to Omega union Gamma+_delta.  Congruent neighborhoods (after the
    canonical-frame rotation) share a single QP solve.
    """
    if nodes is None:
        nodes = np.nonzero(cloud.theta_mask)[0]
    basis = monomial_basis()
    n = cloud.n_nodes
    weights = np.zeros_like(cloud.neighbor_cols, dtype=float)
    has = np.zeros(n, dtype=bool)
    rank = np.zeros(n, dtype=np.int16)
    cond = np.full(n, np.nan)
    memo = {}
    for i in nodes:
        js = cloud.neighbor_indices(i)
        if len(js) == 0:
            raise QuadratureError(f"node {int(i)} has an empty neighborhood")
        z = _local_offsets(cloud, int(i), js)
        canon = np.round(z / cloud.h, _KEY_DECIMALS) + 0.0  # normalize -0.0
        order = np.lexsort((canon[:, 1], canon[:, 0]))
        key = canon[order].tobytes()
        hit = memo.get(key)
        if hit is None:
            w_sorted, rk, cd, residual, gnorm = _solve_min_norm(z[order], cloud.delta, basis)
            if residual > RESIDUAL_TOL * gnorm:
                raise QuadratureError(
                    f"reproducing constraints infeasible at node {int(i)} "
                    f"({len(js)} neighbors, residual {residual:.3e}); is delta/h too small?")
            hit = (w_sorted, rk, cd)
            memo[key] = hit
        w_sorted, rk, cd = hit
        w = np.empty(len(js))
        w[order] = w_sorted
        weights[cloud.neighbor_indptr[i]:cloud.neighbor_indptr[i + 1]] = w
        has[i] = True
        rank[i] = rk
        cond[i] = cd
    return QuadratureRule(cloud.delta, cloud.neighbor_indptr, cloud.neighbor_cols,
                          weights, has, rank, cond)


def integrate(rule: QuadratureRule, cloud: PointCloud, node: int, f) -> float:
    """Discrete ball integral sum_j f(x_i, x_j) w_{j,i}."""
    js = cloud.neighbor_indices(node)
    w = rule.weights_for(node)
    vals = np.asarray(f(cloud.points[node], cloud.points[js]), dtype=float)
    return float(np.dot(vals, w))


# --- binary weight cache -----------------------------------------------------

_MAGIC = b"PLPSW001"


def cache_key(domain, grid: str, h: float, delta: float, family: str) -> str:
    """Stable identifier for a (domain, grid, h, delta, kernel family) combination."""
    tag = f"{domain.kind}:{domain.center}:{domain.half_width}:{domain.r_inner}:" \
          f"{domain.r_outer}:{grid}:{h!r}:{delta!r}:{family}"
    return hashlib.sha1(tag.encode()).hexdigest()[:16]


def save_weight_cache(path, rule: QuadratureRule) -> None:
    """Little-endian records of (node id, neighbor count, neighbor ids, weights)."""
    nodes = np.nonzero(rule.has_weights)[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", len(nodes)))
        fh.write(struct.pack("<d", rule.delta))
        for i in nodes:
            lo, hi = rule.indptr[i], rule.indptr[i + 1]
            fh.write(struct.pack("<ii", int(i), int(hi - lo)))
            fh.write(rule.cols[lo:hi].astype("<i4").tobytes())
            fh.write(rule.weights[lo:hi].astype("<f8").tobytes())


def load_weight_cache(path, cloud: PointCloud) -> QuadratureRule:
    """Rebuild a rule from a cache file; validates neighbor ids against the cloud."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise QuadratureError(f"{path} is not a weight cache")
        (count,) = struct.unpack("<q", fh.read(8))
        (delta,) = struct.unpack("<d", fh.read(8))
        weights = np.zeros_like(cloud.neighbor_cols, dtype=float)
        has = np.zeros(cloud.n_nodes, dtype=bool)
        for _ in range(count):
            i, n = struct.unpack("<ii", fh.read(8))
            ids = np.frombuffer(fh.read(4 * n), dtype="<i4")
            w = np.frombuffer(fh.read(8 * n), dtype="<f8")
            lo, hi = cloud.neighbor_indptr[i], cloud.neighbor_indptr[i + 1]
            if hi - lo != n or not np.array_equal(cloud.neighbor_cols[lo:hi], ids):
                raise QuadratureError(f"cached neighbor list of node {i} does not match the cloud")
            weights[lo:hi] = w
            has[i] = True
    return QuadratureRule(delta, cloud.neighbor_indptr, cloud.neighbor_cols, weights, has,
                          np.zeros(cloud.n_nodes, dtype=np.int16), np.full(cloud.n_nodes, np.nan))
