"""Benchmark catalog integrity, norms, rate fitting and report formats."""

import numpy as np
import pytest

from perilps.geometry import Domain, build_cartesian_cloud
from perilps.harness import (HarnessError, _cylinder_coeffs, case_catalog,
                             fit_rate, get_case, l2_error, local_pde_residual,
                             run_convergence)
from perilps.kernel import Material


class TestCatalog:
    def test_six_cases(self):
        names = [c.name for c in case_catalog()]
        assert names == ["patch-static", "nonlinear-static", "cylinder-static",
                         "patch-dynamic", "nonlinear-dynamic", "cylinder-dynamic"]

    def test_unknown_case(self):
        with pytest.raises(HarnessError):
            get_case("torsion")

    def test_manufactured_solutions_satisfy_local_pde(self):
        # independent finite-difference residual of the plane-strain Navier
        # equation at random sample points, for both Poisson ratios
        for case in case_catalog():
            for nu in (0.3, 0.49):
                res = local_pde_residual(case, Material(poisson=nu))
                assert res < 1e-6, (case.name, nu, res)

    def test_cylinder_coefficients_frozen(self):
        # direct arithmetic with K = E = 1, nu = 0.3:
        # A = 1.3*0.4*0.1/1.25, B = 1.3*0.1*2.25/1.25
        a, b = _cylinder_coeffs(Material(poisson=0.3))
        assert a == pytest.approx(0.0416, abs=1e-15)
        assert b == pytest.approx(0.234, abs=1e-15)

    def test_nonlinear_static_origin_value(self):
        case = get_case("nonlinear-static")
        u0 = case.displacement(Material())
        np.testing.assert_allclose(u0(0.0, np.zeros((1, 2)))[0], [0.0, 0.0], atol=0)

    def test_dynamic_patch_initial_data(self):
        case = get_case("patch-dynamic")
        mat = Material()
        pts = np.array([[0.1, -0.2]])
        np.testing.assert_allclose(case.displacement(mat)(0.0, pts)[0],
                                   [3 * 0.1 + 2 * (-0.2), -0.1 + 2 * (-0.2)])
        np.testing.assert_allclose(case.velocity(mat)(0.0, pts)[0], [1.0, 1.0])

    def test_cylinder_dynamic_force_free(self):
        # u0 linear in t means u_tt = 0, so f stays identically zero
        case = get_case("cylinder-dynamic")
        f = case.body_force(Material())
        pts = np.array([[1.2, 0.3], [0.0, -1.3]])
        np.testing.assert_allclose(f(0.37, pts), 0.0, atol=0)


class TestL2Error:
    def test_exact_field_zero(self):
        cloud = build_cartesian_cloud(Domain.square(0.5), h=0.05, delta=0.2)

        def u0(t, pts):
            return np.stack([pts[:, 0], pts[:, 1] ** 2], axis=1)

        assert l2_error(cloud, u0(0.0, cloud.points), u0) == 0.0

    def test_constant_shift(self):
        # constant offset eps on the unit square: norm eps * sqrt(|Omega|);
        # exact here because the clipped cells partition the domain
        cloud = build_cartesian_cloud(Domain.square(0.5), h=0.05, delta=0.2)

        def u0(t, pts):
            return np.zeros_like(pts)

        eps = 3e-3
        u = np.full((cloud.n_nodes, 2), 0.0)
        u[:, 0] = eps
        assert l2_error(cloud, u, u0) == pytest.approx(eps, rel=1e-12)


class TestFitRate:
    def test_exact_quadratic_pair(self):
        fit = fit_rate([(0.2, 0.04), (0.1, 0.01)])
        assert fit.slope == pytest.approx(2.0, abs=1e-12)
        assert not fit.exact

    def test_flat_rows(self):
        fit = fit_rate([(0.2, 0.37), (0.1, 0.37)])
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    def test_noisy_three_halves(self):
        rng = np.random.default_rng(12)
        deltas = [0.4, 0.2, 0.1, 0.05]
        rows = [(d, 3.0 * d**1.5 * (1.0 + 0.01 * rng.standard_normal())) for d in deltas]
        fit = fit_rate(rows)
        assert 1.4 <= fit.slope <= 1.6
        assert fit.halfwidth >= 0.0

    def test_floor_rows_marked_exact(self):
        fit = fit_rate([(0.2, 1e-15), (0.1, 5e-16)])
        assert fit.exact

    def test_floor_rows_excluded_from_fit(self):
        fit = fit_rate([(0.4, 0.16), (0.2, 0.04), (0.1, 0.01), (0.05, 1e-16)])
        assert fit.n_used == 3
        assert fit.slope == pytest.approx(2.0, abs=1e-12)

    def test_too_few_rows(self):
        with pytest.raises(HarnessError):
            fit_rate([(0.2, 0.1)])


class TestRunConvergence:
    def test_patch_static_exact_marker(self):
        report = run_convergence("patch-static", "smooth", deltas=(0.2, 0.1))
        assert report.rates["l2"].exact
        assert report.metadata["theory_rate_l2"] == 2.0
        for _, _, l2, _ in report.rows:
            assert l2 <= 1e-10

    def test_monotone_refinement_and_columns(self, tmp_path):
        report = run_convergence("nonlinear-static", "constant", deltas=(0.2, 0.1))
        (d1, h1, e1, g1), (d2, h2, e2, g2) = report.rows
        assert e2 < e1
        assert h1 == pytest.approx(d1 / 4.0)
        path = tmp_path / "report.csv"
        report.write_csv(path)
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "case,strategy,kernel,nu,grid,delta,h,l2_error,g_inf"
        assert len(lines) == 3
        assert len(lines[1].split(",")) == 9
        rpath = tmp_path / "rates.csv"
        report.write_rates_csv(rpath)
        rlines = [ln for ln in rpath.read_text().splitlines() if not ln.startswith("#")]
        assert rlines[0] == "case,strategy,metric,rate,halfwidth"
        assert {ln.split(",")[2] for ln in rlines[1:]} == {"l2", "g_inf"}

    def test_increasing_sequence_rejected(self):
        with pytest.raises(HarnessError):
            run_convergence("nonlinear-static", "smooth", deltas=(0.1, 0.2))

    def test_partial_report(self):
        # a horizon too large for the annulus fails; the row is marked NaN
        report = run_convergence("cylinder-static", "smooth", grid="polar",
                                 deltas=(0.3, 0.1), allow_partial=True)
        assert report.metadata["failed_deltas"] == (0.3,)
        assert np.isnan(report.rows[0][2])
        assert np.isfinite(report.rows[1][2])
