import numpy as np
import pytest

from geoshoot import (
    FrequencyBand,
    RegistrationProblem,
    SpectralOperators,
    StaleGradientError,
    TimeGrid,
    apply_K,
    evaluate,
    gauss_newton_hvp,
    gradient,
    inner_product_V,
    make_phantom,
    mse,
    norm_V,
    project,
    spatial_gradient,
)

from conftest import blob_problem, random_field


class TestProblemValidation:
    def test_grid_mismatch(self):
        src = make_phantom("gaussian-blob", (32, 32))
        tgt = make_phantom("gaussian-blob", (16, 16))
        band = FrequencyBand((8, 8), (32, 32))
        ops = SpectralOperators(band, 3.0, 2)
        with pytest.raises(ValueError):
            RegistrationProblem(source=src, target=tgt, band=band, ops=ops)

    def test_bad_variant(self):
        src = make_phantom("gaussian-blob", (32, 32))
        band = FrequencyBand((8, 8), (32, 32))
        ops = SpectralOperators(band, 3.0, 2)
        with pytest.raises(ValueError):
            RegistrationProblem(source=src, target=src, band=band, ops=ops, variant="direct")

    def test_bad_sigma(self):
        src = make_phantom("gaussian-blob", (32, 32))
        band = FrequencyBand((8, 8), (32, 32))
        ops = SpectralOperators(band, 3.0, 2)
        with pytest.raises(ValueError):
            RegistrationProblem(source=src, target=src, band=band, ops=ops, sigma=0.0)


class TestEvaluate:
    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_zero_velocity_energy(self, variant):
        problem = blob_problem(variant)
        report = evaluate(problem, problem.zero_velocity())
        expected = mse(problem.source, problem.target) / problem.sigma**2
        assert report.regularizer == 0.0
        assert abs(report.energy - expected) < 1e-15
        assert abs(report.energy - (report.regularizer + report.image_term)) < 1e-15

    def test_identical_images_zero_energy(self):
        src = make_phantom("gaussian-blob", (32, 32))
        band = FrequencyBand((8, 8), (32, 32))
        ops = SpectralOperators(band, 3.0, 2)
        problem = RegistrationProblem(source=src, target=src, band=band, ops=ops)
        report = evaluate(problem, problem.zero_velocity())
        assert report.energy == 0.0

    def test_regularizer_matches_inner_product(self, rng):
        problem = blob_problem("state")
        v0 = random_field(problem.band, rng, problem.ops, scale=0.05)
        report = evaluate(problem, v0)
        expected = 0.5 * inner_product_V(v0, v0, problem.ops)
        assert abs(report.regularizer - expected) < 1e-15


class TestGradient:
    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_zero_at_global_minimum(self, variant):
        src = make_phantom("gaussian-blob", (32, 32))
        band = FrequencyBand((8, 8), (32, 32))
        ops = SpectralOperators(band, 3.0, 2)
        problem = RegistrationProblem(source=src, target=src, band=band, ops=ops,
                                      variant=variant)
        report = gradient(problem, problem.zero_velocity())
        assert np.abs(report.gradient.coeffs).max() == 0.0

    def test_zero_velocity_closed_form(self):
        # K pi(-2/sigma^2 (I0 - I1) grad I0), assembled independently
        problem = blob_problem("state", sigma=0.8)
        report = gradient(problem, problem.zero_velocity())
        lam = (-2.0 / problem.sigma**2) * (problem.source.values - problem.target.values)
        g_spatial = lam[None] * spatial_gradient(problem.source).components
        expected = apply_K(project(g_spatial, problem.band), problem.ops)
        assert np.abs(report.gradient.coeffs - expected.coeffs).max() \
            < 1e-12 * np.abs(expected.coeffs).max()

    def test_variants_identical_at_zero_velocity(self):
        ga = gradient(blob_problem("state"), blob_problem("state").zero_velocity())
        gb = gradient(blob_problem("deformation"), blob_problem("deformation").zero_velocity())
        diff = np.abs(ga.gradient.coeffs - gb.gradient.coeffs).max()
        assert diff <= 1e-10 * np.abs(ga.gradient.coeffs).max()

    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_gradient_is_hermitian(self, variant, rng):
        from geoshoot import hermitian_defect

        problem = blob_problem(variant)
        v0 = random_field(problem.band, rng, problem.ops, scale=0.05)
        report = gradient(problem, v0)
        defect = hermitian_defect(report.gradient.coeffs, problem.band)
        assert defect <= 1e-12 * np.abs(report.gradient.coeffs).max()

    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_directional_derivative_finite_difference(self, variant, rng):
        # Richardson across the two step widths removes the linear bias the
        # interpolation kink of the transport leaves in a plain central
        # difference
        problem = blob_problem(variant)
        v0 = problem.zero_velocity()
        report = gradient(problem, v0)
        for _ in range(3):
            d = random_field(problem.band, rng, problem.ops, scale=1.0)
            analytic = inner_product_V(report.gradient, d, problem.ops)
            fd = {}
            for eps in (1e-3, 1e-4):
                plus = evaluate(problem, v0 + eps * d).energy
                minus = evaluate(problem, v0 + (-eps) * d).energy
                fd[eps] = (plus - minus) / (2 * eps)
            extrapolated = (10.0 * fd[1e-4] - fd[1e-3]) / 9.0
            assert abs(analytic - extrapolated) <= 1e-4 * abs(extrapolated)
            # each plain difference agrees at its own first-order accuracy
            for eps in fd:
                assert abs(analytic - fd[eps]) <= 5e-3 * abs(fd[eps])

    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_directional_derivative_away_from_rest(self, variant, rng):
        # the transported gradient carries a truncation-level model error
        # away from the rest point; it stays a descent direction
        problem = blob_problem(variant)
        v0 = random_field(problem.band, rng, problem.ops, scale=0.05)
        report = gradient(problem, v0)
        errs = []
        for _ in range(3):
            d = random_field(problem.band, rng, problem.ops, scale=1.0)
            analytic = inner_product_V(report.gradient, d, problem.ops)
            eps = 1e-4
            plus = evaluate(problem, v0 + eps * d).energy
            minus = evaluate(problem, v0 + (-eps) * d).energy
            fd = (plus - minus) / (2 * eps)
            errs.append(abs(analytic - fd) / max(abs(fd), 1e-12))
        assert np.median(errs) <= 0.2


class TestGaussNewton:
    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_zero_direction(self, variant):
        problem = blob_problem(variant)
        report = gradient(problem, problem.zero_velocity())
        out = gauss_newton_hvp(problem, report, problem.zero_velocity())
        assert np.abs(out.coeffs).max() == 0.0

    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_symmetry_and_positivity(self, variant, rng):
        problem = blob_problem(variant, grid=(16, 16), band_size=8)
        report = gradient(problem, problem.zero_velocity())
        for _ in range(5):
            da = random_field(problem.band, rng, problem.ops, scale=1.0)
            db = random_field(problem.band, rng, problem.ops, scale=1.0)
            ha = gauss_newton_hvp(problem, report, da)
            hb = gauss_newton_hvp(problem, report, db)
            lhs = inner_product_V(ha, db, problem.ops)
            rhs = inner_product_V(da, hb, problem.ops)
            assert abs(lhs - rhs) <= 1e-6 * norm_V(ha, problem.ops) * norm_V(db, problem.ops)
            quad = inner_product_V(ha, da, problem.ops)
            assert quad >= 0.999 * inner_product_V(da, da, problem.ops)

    def test_normal_operator_closed_form_at_rest(self, rng):
        # H d = d + K pi(2/sigma^2 (grad I0 . iota(d)) grad I0) at v0 = 0
        from geoshoot import include

        problem = blob_problem("state")
        report = gradient(problem, problem.zero_velocity())
        d = random_field(problem.band, rng, problem.ops, scale=1.0)
        got = gauss_newton_hvp(problem, report, d)
        grad_src = spatial_gradient(problem.source).components
        dot = np.einsum("i...,i...->...", grad_src, include(d).components)
        term = apply_K(project((2.0 / problem.sigma**2) * dot[None] * grad_src, problem.band),
                       problem.ops)
        expected = d + term
        assert np.abs(got.coeffs - expected.coeffs).max() \
            <= 1e-11 * np.abs(expected.coeffs).max()

    def test_energy_only_report_rejected(self, rng):
        problem = blob_problem("state")
        report = evaluate(problem, problem.zero_velocity())
        with pytest.raises(StaleGradientError):
            gauss_newton_hvp(problem, report, problem.zero_velocity())

    def test_foreign_report_rejected(self):
        p1 = blob_problem("state")
        p2 = blob_problem("state")
        report = gradient(p1, p1.zero_velocity())
        with pytest.raises(StaleGradientError):
            gauss_newton_hvp(p2, report, p2.zero_velocity())


class Test3DStack:
    @pytest.mark.parametrize("variant", ["state", "deformation"])
    def test_full_pipeline_in_three_dimensions(self, variant):
        from geoshoot import OptimizerConfig, jacobian_determinant, run
        from geoshoot.transport import FINE_SAMPLING
        from geoshoot import integrate_epdiff, solve_deformation_state

        src = make_phantom("gaussian-blob", (12, 12, 12), smoothness=0.14)
        tgt = make_phantom("offset-blob", (12, 12, 12), smoothness=0.15,
                           center=(0.58, 0.5, 0.5))
        band = FrequencyBand((5, 5, 5), (12, 12, 12))
        ops = SpectralOperators(band, 3.0, 2)
        problem = RegistrationProblem(source=src, target=tgt, band=band, ops=ops,
                                      time=TimeGrid(5), variant=variant)
        v, record = run(problem, problem.zero_velocity(),
                        OptimizerConfig(max_outer_iterations=3))
        assert record[-1].mse_rel < 60.0
        path = integrate_epdiff(v, problem.time, ops, samples_per_interval=FINE_SAMPLING)
        u1 = solve_deformation_state(path, problem.time, ops)[-1]
        assert jacobian_determinant(u1, ops).min() > 0.0


class TestStorageCounts:
    def test_complex_counts_scale_with_band(self):
        counts = {}
        for b in (4, 8):
            problem = blob_problem("state", band_size=b)
            report = gradient(problem, problem.zero_velocity())
            counts[b] = report.storage_counts()["complex_coefficients"]
        assert counts[8] == counts[4] * 4  # B^2 scaling in 2-d

    def test_deformation_variant_stores_fewer_grid_scalars(self):
        state = gradient(blob_problem("state"), blob_problem("state").zero_velocity())
        deform = gradient(blob_problem("deformation"),
                          blob_problem("deformation").zero_velocity())
        assert deform.storage_counts()["grid_scalars"] \
            < state.storage_counts()["grid_scalars"]
