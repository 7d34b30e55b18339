import csv

import numpy as np
import pytest

from core.errors import ConfigError, DivergenceError
from core.gradcheck import check_gradient
from core.sampling import SamplerSpec, box_downsample, pseudo_inverse_upsample
from network.regnet import build_network, tiny_unet
from network.trainer import TrainConfig, train
from scenes.dataset import build_dataset
from scenes.generator import SceneSpec, generate_scenes
from solver.nett import (
    TRACE_COLUMNS, MetricTrace, NettConfig, RegularizerKind, TraceRow, _regularizer_graph,
    coercivity_probe, correlate_trace, cross_term_audit, data_term, grid_search, nett_optimize,
    nett_step, regularizer_value, regularizer_value_and_grad,
)


@pytest.fixture
def identity_weights():
    return build_network(tiny_unet(final_skip=True), seed=2)


@pytest.fixture
def zero_weights(tiny_weights):
    return tiny_weights.zeros()


class TestRegularizer:
    def test_parse(self):
        assert RegularizerKind.parse(" Coercive_Skip ") is RegularizerKind.COERCIVE_SKIP
        with pytest.raises(ConfigError, match="scheme2_residual"):
            RegularizerKind.parse("tv")

    @pytest.mark.parametrize("kind", list(RegularizerKind))
    def test_gradient_matches_finite_differences(self, kind, tiny_weights, rng):
        fn = lambda t: _regularizer_graph(kind, tiny_weights, t)  # noqa: E731
        assert check_gradient(fn, rng.uniform(size=(1, 1, 8, 8))) < 1e-4

    def test_identity_network_residual_vanishes(self, identity_weights, rng):
        x = rng.uniform(size=(8, 8))
        value, grad = regularizer_value_and_grad(RegularizerKind.SCHEME2_RESIDUAL, identity_weights, x)
        assert value == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(x))

    def test_coercive_skip_with_identity_is_squared_norm(self, identity_weights, rng):
        x = rng.uniform(size=(8, 8))
        value, grad = regularizer_value_and_grad(RegularizerKind.COERCIVE_SKIP, identity_weights, x)
        assert value == pytest.approx(float(np.sum(x ** 2)), rel=1e-12)
        np.testing.assert_allclose(grad, 2.0 * x, rtol=1e-12)

    def test_zero_network_values(self, zero_weights, rng):
        x = rng.uniform(size=(8, 8))
        assert regularizer_value(RegularizerKind.SCHEME1_NORM, zero_weights, x) == 0.0
        assert regularizer_value(RegularizerKind.SCHEME2_RESIDUAL, zero_weights, x) == pytest.approx(
            float(np.sum(x ** 2)), rel=1e-12)

    def test_batch_value_is_sum(self, tiny_weights, rng):
        x = rng.uniform(size=(2, 8, 8))
        kind = RegularizerKind.SCHEME2_RESIDUAL
        total, grad = regularizer_value_and_grad(kind, tiny_weights, x)
        single = [regularizer_value_and_grad(kind, tiny_weights, x[i]) for i in range(2)]
        assert total == pytest.approx(single[0][0] + single[1][0], rel=1e-10)
        np.testing.assert_allclose(grad[1], single[1][1], atol=1e-10)


class TestNettStep:
    def test_fixed_point_with_identity_network(self, identity_weights, rng):
        gt = rng.uniform(size=(16, 16))
        y = box_downsample(gt, 4)
        x, trace = nett_optimize(y, identity_weights, NettConfig(iterations=10), gt=gt)
        assert np.max(np.abs(x - pseudo_inverse_upsample(y, 4))) < 1e-12
        assert len(trace) == 11

    def test_zero_alpha_never_increases_data_term(self, tiny_weights):
        cfg = NettConfig(alpha=0.0)
        for case in range(20):
            r = np.random.default_rng([case, 3])
            y = r.uniform(size=(4, 4))
            x = r.normal(size=(16, 16))
            prev = data_term(x, y, 4)
            for _ in range(100):
                x = nett_step(x, y, tiny_weights, cfg)
                cur = data_term(x, y, 4)
                assert cur <= prev * (1 + 1e-12) + 1e-300
                prev = cur

    def test_zero_network_shrinks_iterate(self, zero_weights, rng):
        x = rng.uniform(size=(16, 16))
        y = box_downsample(x, 4)
        cfg = NettConfig(s=0.5, alpha=0.1)
        np.testing.assert_allclose(nett_step(x, y, zero_weights, cfg), (1 - 2 * 0.5 * 0.1) * x, rtol=1e-12)

    def test_data_step_contracts_residual(self, tiny_weights, rng):
        x = rng.normal(size=(8, 8))
        y = rng.normal(size=(2, 2))
        x1 = nett_step(x, y, tiny_weights, NettConfig(s=1.0, alpha=0.0))
        np.testing.assert_allclose(box_downsample(x1, 4) - y, (1 - 1 / 16) * (box_downsample(x, 4) - y),
                                   atol=1e-12)

    def test_zero_iterations_single_row(self, tiny_weights, rng):
        gt = rng.uniform(size=(16, 16))
        x, trace = nett_optimize(box_downsample(gt, 4), tiny_weights, NettConfig(iterations=0), gt=gt)
        assert len(trace) == 1
        assert trace.rows[0].iteration == 0
        np.testing.assert_array_equal(x, pseudo_inverse_upsample(box_downsample(gt, 4), 4))

    def test_record_every_keeps_last(self, tiny_weights, rng):
        y = rng.uniform(size=(4, 4))
        _, trace = nett_optimize(y, tiny_weights, NettConfig(iterations=7, record_every=3))
        assert [r.iteration for r in trace.rows] == [0, 3, 6, 7]

    def test_deterministic(self, tiny_weights, rng):
        y = rng.uniform(size=(4, 4))
        a, _ = nett_optimize(y, tiny_weights, NettConfig(iterations=5))
        b, _ = nett_optimize(y, tiny_weights, NettConfig(iterations=5))
        np.testing.assert_array_equal(a, b)

    def test_divergence_keeps_partial_trace(self, zero_weights, rng):
        y = rng.uniform(size=(4, 4))
        with pytest.raises(DivergenceError, match="diverged at iteration") as err:
            nett_optimize(y, zero_weights, NettConfig(s=1.0, alpha=2.0, iterations=60))
        assert err.value.trace is not None
        assert len(err.value.trace) >= 1

    def test_bilinear_init(self, tiny_weights, rng):
        y = rng.uniform(size=(4, 4))
        cfg = NettConfig(iterations=0, init="bilinear")
        x, _ = nett_optimize(y, tiny_weights, cfg, sampler=SamplerSpec())
        assert x.shape == (16, 16)
        assert not np.array_equal(x, pseudo_inverse_upsample(y, 4))


class TestTrace:
    def test_iterations_must_increase(self):
        trace = MetricTrace()
        trace.append(TraceRow(0, 1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            trace.append(TraceRow(0, 1.0, 1.0, 1.0))

    def test_non_finite_rejected(self):
        with pytest.raises(DivergenceError):
            MetricTrace().append(TraceRow(0, float("inf"), 0.0, 0.0))

    def test_csv(self, tiny_weights, rng, tmp_path):
        gt = rng.uniform(size=(16, 16))
        _, trace = nett_optimize(box_downsample(gt, 4), tiny_weights, NettConfig(iterations=3), gt=gt)
        with trace.to_csv(tmp_path / "trace.csv").open(newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == 5
        assert all(cell != "" for cell in rows[-1])


def _trace(functional, rmse_d, rmse_v):
    trace = MetricTrace()
    for k, (f, d, v) in enumerate(zip(functional, rmse_d, rmse_v)):
        trace.append(TraceRow(k, f, 0.0, f, d, v))
    return trace


class TestCorrelation:
    def test_perfect_signs(self):
        f = [4.0, 3.0, 2.5, 1.0]
        corr = correlate_trace(_trace(f, [2 * v + 1 for v in f], [-v for v in f]))
        assert corr.functional_rmse_d == pytest.approx(1.0)
        assert corr.functional_rmse_v == pytest.approx(-1.0)
        assert corr.undefined == []

    def test_constant_series_undefined(self):
        corr = correlate_trace(_trace([3.0, 2.0, 1.0], [0.5, 0.4, 0.1], [0.2, 0.2, 0.2]))
        assert corr.functional_rmse_v is None
        assert corr.undefined == ["rmse_v"]

    def test_needs_three_rows(self):
        with pytest.raises(ValueError, match="at least 3"):
            correlate_trace(_trace([1.0, 0.5], [1.0, 0.5], [1.0, 0.5]))


class TestCoercivity:
    def test_zero_network_gives_quadratic(self, zero_weights, rng):
        x0 = rng.uniform(size=(8, 8))
        probe = coercivity_probe(RegularizerKind.SCHEME2_RESIDUAL, zero_weights, x0, [1, 10, 100])
        norm2 = float(np.sum(x0 ** 2))
        for row in probe.rows:
            assert row.value == pytest.approx(row.t ** 2 * norm2, rel=1e-12)
            assert row.ratio == pytest.approx(norm2, rel=1e-12)
        assert probe.strictly_increasing

    def test_coercive_skip_bound_with_random_network(self, tiny_weights, rng):
        x0 = rng.uniform(size=(8, 8))
        probe = coercivity_probe(RegularizerKind.COERCIVE_SKIP, tiny_weights, x0, [1, 10, 100, 1000])
        assert probe.bound_holds
        assert len(probe.rows) == 4

    def test_scales_must_ascend(self, tiny_weights):
        with pytest.raises(ValueError, match="ascending"):
            coercivity_probe(RegularizerKind.SCHEME1_NORM, tiny_weights, np.ones((8, 8)), [10, 1])


class TestDiagnostics:
    def test_audit_fractions(self, tiny_weights, rng):
        report = cross_term_audit(rng.uniform(size=(6, 8, 8)), tiny_weights, s_alpha=0.001, chunk=4)
        assert report.samples == 6
        for v in (report.fraction_holds, report.fraction_bound_holds, report.fraction_cross_nonneg):
            assert 0.0 <= v <= 1.0
        assert np.isfinite(report.mean_cross_term)

    def test_audit_identity_network_holds(self, identity_weights, rng):
        report = cross_term_audit(rng.uniform(size=(3, 8, 8)), identity_weights)
        assert report.fraction_holds == 1.0
        assert report.mean_cross_term == 0.0

    def test_audit_scheme1_uses_network_output(self, zero_weights, rng):
        report = cross_term_audit(rng.uniform(size=(3, 8, 8)), zero_weights, kind=RegularizerKind.SCHEME1_NORM)
        assert report.fraction_holds == 1.0
        assert report.mean_cross_term == 0.0

    def test_kind_for_scheme(self):
        assert RegularizerKind.for_scheme(1, RegularizerKind.COERCIVE_SKIP) is RegularizerKind.SCHEME1_NORM
        assert RegularizerKind.for_scheme(2) is RegularizerKind.SCHEME2_RESIDUAL
        assert RegularizerKind.for_scheme(2, RegularizerKind.COERCIVE_SKIP) is RegularizerKind.COERCIVE_SKIP

    def test_grid_search_marks_divergence(self, zero_weights, rng):
        gt = rng.uniform(size=(16, 16))
        points = grid_search(box_downsample(gt, 4), gt, zero_weights, NettConfig(iterations=30),
                             s_values=[1.0], alpha_values=[0.0, 2.0])
        assert [(p.s, p.alpha) for p in points] == [(1.0, 0.0), (1.0, 2.0)]
        assert points[0].status == "ok"
        assert points[0].rmse_d is not None
        assert points[1].status.startswith("diverged")
        assert points[1].rmse_d is None


@pytest.mark.slow
def test_long_run_traces_correlate(tiny_weights):
    rng = np.random.default_rng(70)
    gt = rng.uniform(size=(32, 32))
    _, trace = nett_optimize(box_downsample(gt, 4), tiny_weights, NettConfig(iterations=70), gt=gt)
    assert len(trace) == 71
    corr = correlate_trace(trace)
    assert all(v is None or -1.0 <= v <= 1.0 for v in (corr.functional_rmse_d, corr.functional_rmse_v))


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(RegularizerKind))
def test_regularizer_gradients_many_inits(kind):
    for case in range(50):
        weights = build_network(tiny_unet(), seed=case)
        x = np.random.default_rng([case, 7]).uniform(size=(1, 1, 8, 8))
        fn = lambda t: _regularizer_graph(kind, weights, t)  # noqa: E731
        assert check_gradient(fn, x) < 1e-4, f"case {case}"


@pytest.mark.slow
def test_trained_residual_regularizer_grows_along_rays():
    spec = SceneSpec(height=64, width=64)
    records = build_dataset(generate_scenes(spec, 60, master_seed=[5, 0]), 2, SamplerSpec(),
                            patch=32, stride=32, seed=5)
    validation = build_dataset(generate_scenes(spec, 10, master_seed=[5, 2]), 2, SamplerSpec(),
                               patch=32, stride=32, seed=6)
    weights, _ = train(records, tiny_unet(), TrainConfig(epochs=5, batch_size=16), validation=validation)
    for x0 in generate_scenes(spec, 3, master_seed=[5, 1]):
        probe = coercivity_probe(RegularizerKind.SCHEME2_RESIDUAL, weights, x0, [1.0, 10.0, 100.0, 1000.0])
        assert probe.strictly_increasing, [r.value for r in probe.rows]
