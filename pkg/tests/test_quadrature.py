"""Moment oracle and reproducing-weight properties.

The closed-form moments are cross-checked against adaptive numerical
integration of the singular integrand in polar coordinates, which is an
independent path.
"""

import numpy as np
import pytest
from scipy import integrate as scipy_integrate

from perilps.geometry import Domain, build_cartesian_cloud, build_polar_cloud
from perilps.quadrature import (QuadratureError, build_rule, cache_key,
                                compute_weights, exact_moment, integrate,
                                load_weight_cache, monomial_basis,
                                save_weight_cache)


def moment_by_quadrature(alpha, delta):
    """Adaptive polar integration of z^alpha/|z|^3 over the disk."""
    a, b = alpha

    def integrand(r, t):
        return (r * np.cos(t)) ** a * (r * np.sin(t)) ** b / r**3 * r

    val, _ = scipy_integrate.dblquad(integrand, 0.0, 2.0 * np.pi, 0.0, delta,
                                     epsabs=1e-12, epsrel=1e-12)
    return val


class TestExactMoment:
    def test_basis_size(self):
        assert len(monomial_basis()) == 18

    def test_frozen_values(self):
        delta = 0.3
        assert exact_moment((2, 0), delta) == pytest.approx(np.pi * delta, rel=1e-14)
        assert exact_moment((1, 1), delta) == 0.0
        assert exact_moment((4, 0), delta) == pytest.approx(np.pi * delta**3 / 4.0, rel=1e-14)
        assert exact_moment((2, 2), delta) == pytest.approx(np.pi * delta**3 / 12.0, rel=1e-14)

    def test_against_adaptive_quadrature(self):
        delta = 0.17
        for alpha in monomial_basis():
            assert exact_moment(alpha, delta) == pytest.approx(
                moment_by_quadrature(alpha, delta), abs=1e-10)

    def test_rejects_nonintegrable(self):
        with pytest.raises(QuadratureError):
            exact_moment((1, 0), 0.1)
        with pytest.raises(QuadratureError):
            exact_moment((0, 0), 0.1)


@pytest.fixture(scope="module")
def square_cloud():
    return build_cartesian_cloud(Domain.square(0.5), h=0.05, delta=0.2)


@pytest.fixture(scope="module")
def square_rule(square_cloud):
    return build_rule(square_cloud)


class TestWeights:
    def test_constraint_feasibility(self, square_cloud, square_rule):
        # ||B w - g||_inf <= 1e-10 ||g||_inf on raw (unscaled) constraints
        basis = monomial_basis()
        delta = square_cloud.delta
        g = np.array([exact_moment(a, delta) for a in basis])
        rng = np.random.default_rng(3)
        nodes = rng.choice(np.nonzero(square_rule.has_weights)[0], size=25, replace=False)
        for i in nodes:
            js = square_cloud.neighbor_indices(i)
            z = square_cloud.points[js] - square_cloud.points[i]
            r = np.linalg.norm(z, axis=1)
            b = np.array([z[:, 0] ** a0 * z[:, 1] ** a1 / r**3 for a0, a1 in basis])
            res = np.max(np.abs(b @ square_rule.weights_for(i) - g))
            assert res <= 1e-10 * np.max(np.abs(g))

    def test_reproduces_all_basis_moments(self, square_cloud, square_rule):
        # criterion-7 style check at an interior and at a collar node
        delta = square_cloud.delta
        interior = int(np.argmin(np.linalg.norm(square_cloud.points, axis=1)))
        collar = int(np.argmin(np.linalg.norm(square_cloud.points - [0.5, 0.0], axis=1)))
        for node in (interior, collar):
            for alpha in monomial_basis():
                def f(xi, xj, alpha=alpha):
                    z = xj - xi
                    r = np.linalg.norm(z, axis=1)
                    return z[:, 0] ** alpha[0] * z[:, 1] ** alpha[1] / r**3
                exact = exact_moment(alpha, delta)
                assert integrate(square_rule, square_cloud, node, f) == pytest.approx(
                    exact, abs=1e-10 * max(1.0, abs(exact)))

    def test_minimum_norm(self, square_cloud):
        # w must be orthogonal to the constraint null space, so any feasible
        # perturbation strictly increases the norm
        node = int(np.argmin(np.linalg.norm(square_cloud.points, axis=1)))
        w, rank, cond = compute_weights(square_cloud, node)
        assert rank == 18
        js = square_cloud.neighbor_indices(node)
        z = square_cloud.points[js] - square_cloud.points[node]
        r = np.linalg.norm(z, axis=1)
        b = np.array([z[:, 0] ** a0 * z[:, 1] ** a1 / r**3 for a0, a1 in monomial_basis()])
        rng = np.random.default_rng(5)
        for _ in range(5):
            n = rng.standard_normal(len(w))
            n -= np.linalg.pinv(b) @ (b @ n)
            assert np.max(np.abs(b @ n)) < 1e-8
            assert abs(np.dot(w, n)) <= 1e-10 * np.linalg.norm(w) * np.linalg.norm(n)
            assert np.linalg.norm(w + 0.1 * n) > np.linalg.norm(w)

    def test_scale_covariance(self):
        # positions x2, delta x2 -> weights x 2^d
        c1 = build_cartesian_cloud(Domain.square(0.5), h=0.05, delta=0.2)
        c2 = build_cartesian_cloud(Domain.square(1.0), h=0.1, delta=0.4)
        np.testing.assert_allclose(c2.points, 2.0 * c1.points, rtol=0, atol=0)
        r1, r2 = build_rule(c1), build_rule(c2)
        np.testing.assert_allclose(r2.weights, 4.0 * r1.weights, rtol=1e-10, atol=1e-18)

    def test_determinism(self, square_cloud):
        r1 = build_rule(square_cloud)
        r2 = build_rule(square_cloud)
        assert np.array_equal(r1.weights, r2.weights)

    def test_polar_congruence_shares_weights(self):
        # same radius, different angles: identical weights after the radial
        # canonicalization, bit for bit
        cloud = build_polar_cloud(Domain.annulus(1.0, 1.5), h=0.05, delta=0.2)
        rule = build_rule(cloud)
        r = np.linalg.norm(cloud.points, axis=1)
        ring = np.nonzero(np.abs(r - 1.25) < 1e-9)[0]
        w0 = np.sort(rule.weights_for(ring[0]))
        for i in ring[1:10]:
            np.testing.assert_array_equal(np.sort(rule.weights_for(int(i))), w0)

    def test_sparse_symmetric_stencil_still_feasible(self):
        # delta = 2h on the lattice gives only 12 neighbors, yet the D4
        # symmetry keeps the 18 constraints consistent
        cloud = build_cartesian_cloud(Domain.square(0.5), h=0.1, delta=0.2)
        rule = build_rule(cloud)
        assert rule.rank[np.nonzero(rule.has_weights)[0][0]] <= 12

    def test_infeasible_reports_node(self):
        # asymmetric curved-boundary stencils at delta/h = 2 cannot reproduce
        # the full moment set; the error names the node and its neighbor count
        cloud = build_cartesian_cloud(Domain.annulus(1.0, 1.5), h=0.1, delta=0.2, mirror=True)
        with pytest.raises(QuadratureError, match="neighbors"):
            build_rule(cloud)

    def test_integrate_examples(self, square_cloud, square_rule):
        node = int(np.argmin(np.linalg.norm(square_cloud.points, axis=1)))
        delta = square_cloud.delta

        def member(xi, xj):
            z = xj - xi
            return z[:, 0] ** 2 / np.linalg.norm(z, axis=1) ** 3

        assert integrate(square_rule, square_cloud, node, member) == pytest.approx(
            np.pi * delta, rel=1e-10)
        assert integrate(square_rule, square_cloud, node, lambda xi, xj: np.zeros(len(xj))) == 0.0

        def odd_member(xi, xj):
            z = xj - xi
            return z[:, 0] * z[:, 1] / np.linalg.norm(z, axis=1) ** 3

        assert integrate(square_rule, square_cloud, node, odd_member) == pytest.approx(0.0, abs=1e-12)


class TestCache:
    def test_round_trip(self, square_cloud, square_rule, tmp_path):
        path = tmp_path / "weights.bin"
        save_weight_cache(path, square_rule)
        loaded = load_weight_cache(path, square_cloud)
        np.testing.assert_array_equal(loaded.weights, square_rule.weights)
        np.testing.assert_array_equal(loaded.has_weights, square_rule.has_weights)

    def test_corrupted_cache_detected(self, square_cloud, square_rule, tmp_path):
        path = tmp_path / "weights.bin"
        save_weight_cache(path, square_rule)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(QuadratureError):
            load_weight_cache(path, square_cloud)

    def test_key_distinguishes_configs(self):
        dom = Domain.square(0.5)
        k1 = cache_key(dom, "cartesian", 0.05, 0.2, "inverse-r")
        k2 = cache_key(dom, "cartesian", 0.025, 0.1, "inverse-r")
        k3 = cache_key(dom, "cartesian", 0.05, 0.2, "constant")
        assert len({k1, k2, k3}) == 3
