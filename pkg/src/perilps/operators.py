"""Discrete nonlocal operators: dilatation, momentum balance, assembly.

The dilatation at node i and the momentum residual at interior nodes are
the quadrature-weighted neighbor sums

    theta_i = d sum_j kappa(r_ij) (z_ij . (u_j - u_i)) w_ji
    (L u)_i = - c_a (lam - mu) sum_j kappa z_ij (theta_i + theta_j) w_ji
              - c_b mu sum_j kappa (z_ij (x) z_ij / r_ij^2) (u_j - u_i) w_ji

with kappa the weighted-volume-normalized kernel density and z_ij = x_j -
x_i.  Assembly eliminates theta by substitution, which gives a two-hop
stencil and halves the unknowns; the matrix-free forms are kept as the
independent verification path.  The row computations are read-only over the
shared cloud and rule, so they parallelize trivially; assembled systems are
immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .boundary import LINEAR, BoundaryPlan
from .geometry import PointCloud
from .kernel import KernelSpec, Material, kernel_scalar
from .quadrature import QuadratureRule


class OperatorError(RuntimeError):
    pass


@dataclass
class NodalField:
    """Displacement samples on all nodes and dilatation where defined (NaN elsewhere)."""

    u: np.ndarray
    theta: np.ndarray


def _pair_arrays(cloud: PointCloud, rule: QuadratureRule, row_mask: np.ndarray):
    """Flattened (rows, cols, z, r, w) over the neighbor lists of the masked rows."""
    counts = np.diff(cloud.neighbor_indptr)
    rows_flat = np.repeat(np.arange(cloud.n_nodes), counts)
    keep = row_mask[rows_flat]
    rows = rows_flat[keep]
    cols = cloud.neighbor_cols[keep]
    w = rule.weights[keep]
    z = cloud.points[cols] - cloud.points[rows]
    r = np.linalg.norm(z, axis=1)
    return rows, cols, z, r, w


def _check_field(u: np.ndarray, cloud: PointCloud, name: str):
    bad = np.nonzero(~np.isfinite(u).all(axis=tuple(range(1, u.ndim))))[0]
    if len(bad):
        raise OperatorError(f"{name} is missing/not finite at node {int(bad[0])}")


def dilatation(cloud: PointCloud, rule: QuadratureRule, spec: KernelSpec,
               u: np.ndarray) -> np.ndarray:
    """Nonlocal dilatation on Omega union Gamma+_delta; NaN on deeper exterior nodes."""
    _check_field(np.asarray(u), cloud, "displacement")
    mask = cloud.theta_mask & rule.has_weights
    rows, cols, z, r, w = _pair_arrays(cloud, rule, mask)
    kappa = kernel_scalar(spec, r)
    du = u[cols] - u[rows]
    contrib = spec.dim * kappa * w * np.einsum("ij,ij->i", z, du)
    acc = np.bincount(rows, weights=contrib, minlength=cloud.n_nodes)
    theta = np.where(mask, acc, np.nan)
    return theta


def apply_lps(cloud: PointCloud, rule: QuadratureRule, spec: KernelSpec,
              material: Material, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Discrete momentum operator at the nodes inside Omega; NaN rows elsewhere."""
    _check_field(np.asarray(u), cloud, "displacement")
    mask = cloud.inside & rule.has_weights
    rows, cols, z, r, w = _pair_arrays(cloud, rule, mask)
    if np.any(~np.isfinite(theta[cols])):
        bad = int(cols[~np.isfinite(theta[cols])][0])
        raise OperatorError(f"dilatation missing at node {bad} inside an interior horizon")
    kappa = kernel_scalar(spec, r)
    lam, mu = material.lam, material.mu
    coeff_a = -spec.c_a * (lam - mu) * kappa * w * (theta[rows] + theta[cols])
    du = u[cols] - u[rows]
    coeff_b = -spec.c_b * mu * kappa * w * np.einsum("ij,ij->i", z, du) / r**2
    contrib = (coeff_a + coeff_b)[:, None] * z
    out = np.full((cloud.n_nodes, 2), np.nan)
    for k in range(2):
        acc = np.bincount(rows, weights=contrib[:, k], minlength=cloud.n_nodes)
        out[mask, k] = acc[mask]
    return out


def g_operator_linf(cloud: PointCloud, rule: QuadratureRule, spec: KernelSpec,
                    v: np.ndarray) -> float:
    """Max over the inner collar Gamma-_2delta of the averaged difference quotient

    (1/m) sum_j K(r) r |v_j - v_i| w_ji, the discrete form of the operator
    whose decay exponent gamma' feeds the convergence bound.
    """
    mask = cloud.regions.gm_2delta & rule.has_weights
    if not np.any(mask):
        return 0.0
    rows, cols, z, r, w = _pair_arrays(cloud, rule, mask)
    kappa = kernel_scalar(spec, r)
    dv = np.linalg.norm(v[cols] - v[rows], axis=1)
    contrib = kappa * r * dv * w
    acc = np.bincount(rows, weights=contrib, minlength=cloud.n_nodes)
    return float(np.max(acc[mask]))


@dataclass
class StiffnessSystem:
    """Eliminated interior system plus everything needed to rebuild the rhs.

    ``a_eff`` acts on interleaved interior displacement dofs (2 per node);
    the linear strategy's mirror coupling is already folded in.  Immutable;
    one solve owns it at a time.
    """

    cloud: PointCloud
    rule: QuadratureRule
    spec: KernelSpec
    material: Material
    plan: BoundaryPlan
    f_fn: object
    interior_idx: np.ndarray
    exterior_idx: np.ndarray
    a_eff: sp.csr_matrix
    l_ext: sp.csr_matrix
    coupling: sp.csr_matrix | None
    symmetric: bool

    @property
    def n_unknowns(self) -> int:
        return 2 * len(self.interior_idx)

    def body_force(self, t: float) -> np.ndarray:
        f = np.asarray(self.f_fn(t, self.cloud.points[self.interior_idx]), dtype=float)
        return f.ravel()

    def rhs(self, t: float) -> np.ndarray:
        c = self.plan.exterior_constants(t, self.cloud).ravel()
        return self.body_force(t) - self.l_ext @ c

    def exterior_values(self, t: float, u_int: np.ndarray) -> np.ndarray:
        c = self.plan.exterior_constants(t, self.cloud)
        if self.coupling is None:
            return c
        return c + (self.coupling @ u_int.ravel()).reshape(-1, 2)

    def full_displacement(self, t: float, u_int: np.ndarray) -> np.ndarray:
        u = np.empty((self.cloud.n_nodes, 2))
        u[self.interior_idx] = u_int.reshape(-1, 2)
        u[self.exterior_idx] = self.exterior_values(t, u_int)
        return u

    def residual_matrix_free(self, t: float, u_full: np.ndarray) -> np.ndarray:
        """Momentum residual recomputed from the operator definitions."""
        theta = dilatation(self.cloud, self.rule, self.spec, u_full)
        lhs = apply_lps(self.cloud, self.rule, self.spec, self.material, u_full, theta)
        f = np.asarray(self.f_fn(t, self.cloud.points[self.interior_idx]), dtype=float)
        return lhs[self.interior_idx] - f


def _dof_cols(idx: np.ndarray):
    return np.stack([2 * idx, 2 * idx + 1], axis=1).ravel()


def assemble(cloud: PointCloud, rule: QuadratureRule, spec: KernelSpec,
             material: Material, plan: BoundaryPlan, f_fn) -> StiffnessSystem:
    """Assemble the eliminated interior operator for the given boundary plan."""
    n = cloud.n_nodes
    inside = cloud.inside
    interior_idx = np.nonzero(inside)[0]
    exterior_idx = np.nonzero(~inside)[0]
    n_int = len(interior_idx)
    int_slot = np.full(n, -1, dtype=np.int64)
    int_slot[interior_idx] = np.arange(n_int)

    theta_nodes = np.nonzero(cloud.theta_mask & rule.has_weights)[0]
    theta_slot = np.full(n, -1, dtype=np.int64)
    theta_slot[theta_nodes] = np.arange(len(theta_nodes))
    lam, mu = material.lam, material.mu

    # Theta: dilatation as a sparse map from all displacement dofs.
    t_mask = np.zeros(n, dtype=bool)
    t_mask[theta_nodes] = True
    rows, cols, z, r, w = _pair_arrays(cloud, rule, t_mask)
    kappa = kernel_scalar(spec, r)
    coef = spec.dim * (kappa * w)[:, None] * z  # (E, 2) acting on u_j, minus on u_i
    tr = theta_slot[rows]
    theta_rows = np.concatenate([tr, tr, tr, tr])
    theta_cols = np.concatenate([2 * cols, 2 * cols + 1, 2 * rows, 2 * rows + 1])
    theta_vals = np.concatenate([coef[:, 0], coef[:, 1], -coef[:, 0], -coef[:, 1]])
    theta_mat = sp.coo_matrix((theta_vals, (theta_rows, theta_cols)),
                              shape=(len(theta_nodes), 2 * n)).tocsr()

    # Momentum rows at interior nodes.
    rows, cols, z, r, w = _pair_arrays(cloud, rule, inside & rule.has_weights)
    if np.any(theta_slot[cols] < 0):
        bad = int(cols[theta_slot[cols] < 0][0])
        raise OperatorError(f"node {bad} needs a dilatation value but carries no weights")
    kappa = kernel_scalar(spec, r)
    ri = int_slot[rows]

    # dilatational coupling: row block gets a_vec against theta_i and theta_j
    a_vec = -spec.c_a * (lam - mu) * (kappa * w)[:, None] * z  # (E, 2)
    p_rows = np.concatenate([2 * ri, 2 * ri + 1, 2 * ri, 2 * ri + 1])
    p_cols = np.concatenate([theta_slot[cols]] * 2 + [theta_slot[rows]] * 2)
    p_vals = np.concatenate([a_vec[:, 0], a_vec[:, 1], a_vec[:, 0], a_vec[:, 1]])
    p_mat = sp.coo_matrix((p_vals, (p_rows, p_cols)),
                          shape=(2 * n_int, len(theta_nodes))).tocsr()

    # deviatoric bond term: 2x2 blocks on (i, j) and -(i, i)
    s = -spec.c_b * mu * kappa * w / r**2
    bxx, bxy, byy = s * z[:, 0] ** 2, s * z[:, 0] * z[:, 1], s * z[:, 1] ** 2
    d_rows = np.concatenate([2 * ri, 2 * ri, 2 * ri + 1, 2 * ri + 1] * 2)
    d_cols = np.concatenate([2 * cols, 2 * cols + 1, 2 * cols, 2 * cols + 1,
                             2 * rows, 2 * rows + 1, 2 * rows, 2 * rows + 1])
    d_vals = np.concatenate([bxx, bxy, bxy, byy, -bxx, -bxy, -bxy, -byy])
    d_mat = sp.coo_matrix((d_vals, (d_rows, d_cols)), shape=(2 * n_int, 2 * n)).tocsr()

    full = (p_mat @ theta_mat + d_mat).tocsc()
    int_dofs = _dof_cols(interior_idx)
    ext_dofs = _dof_cols(exterior_idx)
    a_int = full[:, int_dofs].tocsr()
    l_ext = full[:, ext_dofs].tocsr()

    coupling = None
    # Exact row/column weight symmetry holds only where all stencils are
    # congruent: lattice-complete Cartesian clouds without mirror folding.
    # Polar stencils vary with radius and reflected annulus collars break
    # congruence, leaving a mildly nonsymmetric matrix.
    symmetric = (plan.strategy != LINEAR and cloud.grid == "cartesian"
                 and (cloud.domain.kind == "square" or not cloud.mirror))
    if plan.strategy == LINEAR:
        partners = plan.partner_indices(cloud)
        n_ext = len(exterior_idx)
        c_rows = np.arange(2 * n_ext)
        slots = int_slot[partners]
        if np.any(slots < 0):
            raise OperatorError("mirror partner is not an interior node")
        c_cols = np.stack([2 * slots, 2 * slots + 1], axis=1).ravel()
        coupling = sp.coo_matrix((-np.ones(2 * n_ext), (c_rows, c_cols)),
                                 shape=(2 * n_ext, 2 * n_int)).tocsr()
        a_int = (a_int + l_ext @ coupling).tocsr()

    return StiffnessSystem(cloud, rule, spec, material, plan, f_fn,
                           interior_idx, exterior_idx, a_int, l_ext, coupling, symmetric)


def export_coo(matrix, path) -> None:
    """Text dump: row, col, value per line with 17 significant digits."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
