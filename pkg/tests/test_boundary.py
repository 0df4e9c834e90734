"""Extension strategies: projection, values, mirror coupling, accuracy orders."""

import numpy as np
import pytest

from perilps.boundary import (BoundaryError, BoundaryPlan,
                              constant_extension_values, linear_extension_plan,
                              project_boundary, smooth_extension_values)
from perilps.geometry import Domain, build_cartesian_cloud


def patch_u0(t, pts):
    return np.stack([3 * pts[:, 0] + 2 * pts[:, 1], -pts[:, 0] + 2 * pts[:, 1]], axis=1)


def dynamic_patch_u0(t, pts):
    return np.stack([t + 3 * pts[:, 0] + 2 * pts[:, 1],
                     t - pts[:, 0] + 2 * pts[:, 1]], axis=1)


class TestProjection:
    def test_examples(self):
        sq = Domain.square(0.25)
        np.testing.assert_allclose(project_boundary(sq, [0.3, 0.0]), [0.25, 0.0])
        np.testing.assert_allclose(project_boundary(sq, [0.3, 0.3]), [0.25, 0.25])
        an = Domain.annulus(1.0, 1.5)
        np.testing.assert_allclose(project_boundary(an, [1.6, 0.0]), [1.5, 0.0])


class TestValues:
    def test_smooth_values(self):
        cloud = build_cartesian_cloud(Domain.square(0.25), h=0.025, delta=0.05)
        plan = BoundaryPlan("smooth", patch_u0)
        vals = smooth_extension_values(plan, 0.0, cloud)
        ext = cloud.points[~cloud.inside]
        np.testing.assert_allclose(vals, patch_u0(0.0, ext), atol=0)
        # spot value from the formula: u0(0.3, 0.1) = (1.1, -0.1)
        np.testing.assert_allclose(patch_u0(0.0, np.array([[0.3, 0.1]]))[0], [1.1, -0.1])

    def test_dynamic_smooth_value(self):
        val = dynamic_patch_u0(0.1, np.array([[0.3, 0.1]]))[0]
        np.testing.assert_allclose(val, [1.2, 0.0], atol=1e-15)

    def test_constant_values(self):
        cloud = build_cartesian_cloud(Domain.square(0.25), h=0.025, delta=0.05)
        plan = BoundaryPlan("constant", patch_u0)
        vals = constant_extension_values(plan, 0.0, cloud)
        ext = cloud.points[~cloud.inside]
        target = np.array([0.3, 0.0])
        k = int(np.argmin(np.linalg.norm(ext - target, axis=1)))
        # u0 at the projection (0.25, 0): (0.75, -0.25)
        np.testing.assert_allclose(vals[k], [0.75, -0.25], atol=1e-12)
        # values are constant along the outward ray across the collar
        ray = np.abs(ext[:, 1]) < 1e-12
        ray &= ext[:, 0] > 0.25
        assert len(np.unique(np.round(vals[ray][:, 0], 12))) == 1

    def test_linear_plan_relations(self):
        cloud = build_cartesian_cloud(Domain.square(0.25), h=0.025, delta=0.05, mirror=True)
        plan = BoundaryPlan("linear", patch_u0)
        const, partners = linear_extension_plan(plan, 0.0, cloud)
        ext_idx = np.nonzero(~cloud.inside)[0]
        ext = cloud.points[ext_idx]
        proj = cloud.domain.project_boundary(ext)
        # reflection identity x + mirror(x) = 2 xbar
        np.testing.assert_allclose(ext + cloud.points[partners], 2 * proj, atol=1e-12)
        # for the affine field, 2 u0(xbar) - u0(mirror) = u0(x) exactly
        u_d = const - patch_u0(0.0, cloud.points[partners])
        np.testing.assert_allclose(u_d, patch_u0(0.0, ext), atol=1e-12)

    def test_linear_requires_mirror_cloud(self):
        cloud = build_cartesian_cloud(Domain.square(0.25), h=0.025, delta=0.05, mirror=False)
        plan = BoundaryPlan("linear", patch_u0)
        with pytest.raises(BoundaryError, match="mirror"):
            plan.partner_indices(cloud)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(BoundaryError):
            BoundaryPlan("cubic", patch_u0)


class TestAccuracyOrders:
    def test_second_difference_identity(self):
        # u0 = x^2 beyond a flat face at x = a: the linear extension error is
        # exactly -2 s^2 at depth s (one-dimensional Taylor identity)
        a = 0.25
        for s in (0.01, 0.05, 0.1):
            x = a + s
            mirror = a - s
            u_d = 2.0 * a**2 - mirror**2
            assert u_d - x**2 == pytest.approx(-2.0 * s**2, rel=1e-10)

    def test_constant_extension_lipschitz_bound(self):
        def u0(t, pts):
            return np.stack([np.sin(pts[:, 0]) + np.cos(pts[:, 1]),
                             0.5 * pts[:, 0] * pts[:, 1]], axis=1)

        cloud = build_cartesian_cloud(Domain.square(0.5), h=0.025, delta=0.1)
        plan = BoundaryPlan("constant", u0)
        vals = constant_extension_values(plan, 0.0, cloud)
        ext_idx = np.nonzero(~cloud.inside)[0]
        exact = u0(0.0, cloud.points[ext_idx])
        err = np.linalg.norm(vals - exact, axis=1)
        # global Lipschitz bound of u0 on the collar box (|x|,|y| <= 0.7):
        # rows (cos x, -sin y) and (y/2, x/2): |J|_2 <= sqrt(2 + 0.7^2)
        lip = np.sqrt(2.0 + 0.49)
        dist = cloud.regions.dist[ext_idx]
        assert np.all(err <= lip * dist * (1 + 1e-9) + 1e-12)

    def test_linear_extension_second_order(self):
        # mirror extension of the nonlinear benchmark field: fitted slope of
        # the extension error against collar depth is at least 1.9
        A, C, b = 0.9, 1.4, 1.6

        def u0(t, pts):
            x = pts[:, 0]
            return np.stack([A * x + C * np.sin(b * x), np.zeros_like(x)], axis=1)

        cloud = build_cartesian_cloud(Domain.square(0.5), h=0.0125, delta=0.05, mirror=True)
        plan = BoundaryPlan("linear", u0)
        const, partners = linear_extension_plan(plan, 0.0, cloud)
        ext_idx = np.nonzero(~cloud.inside)[0]
        u_d = const - u0(0.0, cloud.points[partners])
        err = np.linalg.norm(u_d - u0(0.0, cloud.points[ext_idx]), axis=1)
        dist = cloud.regions.dist[ext_idx]
        depths = np.unique(np.round(dist, 10))
        max_err = np.array([np.max(err[np.abs(dist - s) < 1e-9]) for s in depths])
        keep = max_err > 1e-14
        slope = np.polyfit(np.log(depths[keep]), np.log(max_err[keep]), 1)[0]
        assert slope >= 1.9

    def test_affine_reproduction_smooth_and_linear(self):
        cloud = build_cartesian_cloud(Domain.square(0.25), h=0.025, delta=0.05, mirror=True)
        ext_idx = np.nonzero(~cloud.inside)[0]
        exact = patch_u0(0.0, cloud.points[ext_idx])
        smooth_vals = smooth_extension_values(BoundaryPlan("smooth", patch_u0), 0.0, cloud)
        np.testing.assert_allclose(smooth_vals, exact, atol=1e-13)
        const, partners = linear_extension_plan(BoundaryPlan("linear", patch_u0), 0.0, cloud)
        lin_vals = const - patch_u0(0.0, cloud.points[partners])
        np.testing.assert_allclose(lin_vals, exact, atol=1e-13)
