import math

import numpy as np
import pytest

from dynembed import (Event, ModelParams, ReplayContext, TrainConfig, build_log,
                      event_nll, generate, intensity, planted_config, survival_exact,
                      survival_mc, train)
from dynembed.events import ValidationError
from dynembed.training import (TrainingDiverged, fit_loglog, replay_batch,
                               step_complexity_probe)

from conftest import five_node_events, full_gradient_check, zero_params

LOG2 = math.log(2.0)


class TestEventNll:
    def test_single_event_zero_params(self):
        ctx = ReplayContext(zero_params(3, 4, psi=1.0), n=3)
        out = event_nll(ctx, [Event(0, 1, 1.0, 0, 1)])
        assert math.isclose(out.value, -math.log(LOG2), rel_tol=1e-9)

    def test_two_events_add_up_when_embeddings_stay_zero(self):
        p = zero_params(3, 4, psi=1.0)
        single = event_nll(ReplayContext(p, n=3), [Event(0, 1, 1.0, 0, 1)]).value
        double = event_nll(ReplayContext(p, n=3),
                           [Event(0, 1, 1.0, 0, 1), Event(0, 1, 2.0, 0, 0)]).value
        assert math.isclose(double, 2 * single, rel_tol=1e-12)

    def test_matches_per_event_oracle(self):
        p = ModelParams.initialize(5, 4, seed=2)
        events = five_node_events()
        got = event_nll(ReplayContext(p, n=5), events).value

        ctx = ReplayContext(p, n=5)
        want = 0.0
        for e in events:
            lam = intensity(p, ctx.store, e.u, e.v, e.k)
            want -= math.log(lam + 1e-30)
            ctx.advance(e, lam, record=False)
        assert math.isclose(got, want, rel_tol=1e-12)


class TestSurvivalMc:
    def test_three_nodes_zero_params_single_sample(self):
        # one eligible candidate; both endpoints contribute both event
        # types at rate log 2, so the per-event term is 4 log 2
        ctx = ReplayContext(zero_params(3, 2, psi=1.0), n=3)
        rng = np.random.default_rng(0)
        out = survival_mc(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1, 2], 1, rng)
        assert math.isclose(out.value, 4 * LOG2, rel_tol=1e-9)

    def test_vanishing_rates_vanishing_survival(self):
        p = zero_params(3, 2, psi=1.0)
        p.omega_0[:] = -500.0
        p.omega_1[:] = -500.0
        p.v_init[:] = 1.0
        ctx = ReplayContext(p, n=3)
        rng = np.random.default_rng(0)
        out = survival_mc(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1, 2], 4, rng)
        assert 0.0 <= out.value < 1e-200

    def test_node_list_too_small(self):
        ctx = ReplayContext(zero_params(2, 2), n=2)
        with pytest.raises(ValidationError, match="too small"):
            survival_mc(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1], 1,
                        np.random.default_rng(0))

    def test_recorded_and_plain_values_agree(self):
        p = ModelParams.initialize(6, 4, seed=3)
        events = five_node_events()
        nodes = sorted({x for e in events for x in (e.u, e.v)})
        a = survival_mc(ReplayContext(p, n=6), events, nodes, 3,
                        np.random.default_rng(9))
        b = survival_mc(ReplayContext(p, n=6), events, nodes, 3,
                        np.random.default_rng(9), record=False)
        assert math.isclose(a.value, b.value, rel_tol=1e-12)

    def test_large_sample_converges_to_exact(self):
        p = ModelParams.initialize(10, 4, seed=4)
        events = [Event(0, 1, 1.0, 0, 1), Event(2, 3, 1.5, 0, 1)]
        nodes = list(range(10))
        exact = survival_exact(ReplayContext(p, n=10), events, nodes)
        est = survival_mc(ReplayContext(p, n=10), events, nodes, 4000,
                          np.random.default_rng(11), record=False)
        assert abs(est.value - exact) / exact < 0.01


class TestSurvivalExact:
    def test_two_node_graph_has_no_candidates(self):
        ctx = ReplayContext(zero_params(2, 2), n=2)
        assert survival_exact(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1]) == 0.0

    def test_three_node_uniform_rate_enumeration(self):
        ctx = ReplayContext(zero_params(3, 2, psi=1.0), n=3)
        got = survival_exact(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1, 2])
        assert math.isclose(got, 4 * LOG2, rel_tol=1e-9)

    def test_is_the_estimator_mean(self):
        # statistical check: many independent sample streams bracket the
        # exact value within three standard errors
        p = ModelParams.initialize(8, 3, seed=6)
        events = [Event(0, 1, 1.0, 0, 1)]
        nodes = list(range(8))
        exact = survival_exact(ReplayContext(p, n=8), events, nodes)
        draws = []
        for s in range(400):
            est = survival_mc(ReplayContext(p, n=8), events, nodes, 1,
                              np.random.default_rng(s), record=False)
            draws.append(est.value)
        draws = np.array(draws)
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert abs(draws.mean() - exact) <= 3 * se

    def test_large_graph_guard(self):
        ctx = ReplayContext(zero_params(2, 2), n=600)
        with pytest.raises(ValidationError, match="small-graph"):
            survival_exact(ctx, [Event(0, 1, 1.0, 0, 1)], [0, 1, 2])


class TestLossDecomposition:
    def test_total_is_exact_sum(self):
        p = ModelParams.initialize(5, 4, seed=7)
        events = five_node_events()
        nodes = sorted({x for e in events for x in (e.u, e.v)})
        ctx = ReplayContext(p, n=5)
        res = replay_batch(ctx, events, survival=(nodes, 2, np.random.default_rng(1)))
        total = ctx.tape.value(ctx.tape.add(res.nll.node, res.survival.node))
        assert total == res.nll.value + res.survival.value


def _tiny_log(seed=0, n=12, horizon=60.0):
    cfg = planted_config(n=n, mu_hot=0.8, mu_cold=0.01, horizon=horizon, seed=seed,
                         assoc_rate=0.001)
    return generate(cfg)


class TestTrain:
    def test_zero_learning_rate_keeps_parameters(self):
        log, a0 = _tiny_log()
        cfg = TrainConfig(batch_size=50, survival_samples=2, learning_rate=0.0,
                          epochs=2, seed=3, val_fraction=0.0)
        init = ModelParams.initialize(log.n_nodes, 8, seed=cfg.seed)
        result = train(log, cfg, a0=a0, d=8)
        for name in ("v_init", "w_struct", "w_rec", "w_t", "w_h", "b_h",
                     "omega_0", "omega_1"):
            assert np.array_equal(getattr(result.params, name), getattr(init, name))
        assert result.params.rho_0 == init.rho_0

    def test_seed_determinism(self):
        log, a0 = _tiny_log()
        cfg = TrainConfig(batch_size=64, survival_samples=2, learning_rate=0.02,
                          epochs=2, seed=5, val_fraction=0.0)
        r1 = train(log, cfg, a0=a0, d=8)
        r2 = train(log, cfg, a0=a0, d=8)
        for name in ("v_init", "w_struct", "w_rec", "w_t", "w_h", "b_h",
                     "omega_0", "omega_1"):
            assert np.array_equal(getattr(r1.params, name), getattr(r2.params, name))
        assert [r.total for r in r1.reports] == [r.total for r in r2.reports]

    def test_loss_decreases_on_synthetic_log(self):
        cfg_gen = planted_config(n=20, mu_hot=0.8, mu_cold=0.01, horizon=120.0, seed=9,
                                 assoc_rate=0.0005)
        log, a0 = generate(cfg_gen)
        cfg = TrainConfig(batch_size=200, survival_samples=3, learning_rate=0.02,
                          epochs=5, seed=1, val_fraction=0.0)
        result = train(log, cfg, a0=a0, d=16)
        totals = [r.total for r in result.reports]
        drops = sum(1 for a, b in zip(totals, totals[1:]) if b < a)
        assert drops >= 4, totals

    def test_time_scales_stay_positive(self):
        log, a0 = _tiny_log(seed=2)
        cfg = TrainConfig(batch_size=50, survival_samples=2, learning_rate=0.1,
                          epochs=3, seed=2, val_fraction=0.0)
        result = train(log, cfg, a0=a0, d=8)
        assert result.params.psi_0 > 0.0
        assert result.params.psi_1 > 0.0

    def test_reports_shape_and_counts(self):
        log, a0 = _tiny_log(seed=4)
        cfg = TrainConfig(batch_size=32, survival_samples=2, learning_rate=0.01,
                          epochs=2, seed=4, val_fraction=0.2)
        result = train(log, cfg, a0=a0, d=8)
        assert len(result.reports) == 2
        for r in result.reports:
            assert r.total == r.event_nll + r.survival
            assert r.events_processed == len(log) - int(round(0.2 * len(log)))
            assert r.val_total is not None

    def test_early_stopping_respects_patience(self):
        log, a0 = _tiny_log(seed=6)
        # a hopeless learning rate makes validation flat or worse; training
        # must stop after `patience` non-improving epochs
        cfg = TrainConfig(batch_size=50, survival_samples=2, learning_rate=0.0,
                          epochs=50, seed=6, val_fraction=0.2, patience=2)
        result = train(log, cfg, a0=a0, d=8)
        assert len(result.reports) <= 4

    def test_divergence_aborts_with_checkpoint(self):
        log, a0 = _tiny_log(seed=8)
        cfg = TrainConfig(batch_size=40, survival_samples=2, learning_rate=1e12,
                          epochs=5, seed=8, clip_norm=None, val_fraction=0.0)
        with pytest.raises(TrainingDiverged) as exc_info:
            train(log, cfg, a0=a0, d=8)
        assert exc_info.value.params is not None

    def test_empty_log_rejected(self):
        from dynembed.events import EventLog
        with pytest.raises(ValidationError):
            train(EventLog((), 3, (0.0, 1.0)), TrainConfig(epochs=1))

    def test_minibatch_gradient_check(self):
        p = ModelParams.initialize(5, 4, seed=17)
        worst, _ = full_gradient_check(p, five_node_events(), n=5, n_samples=2, seed=7)
        assert worst < 1e-4


class TestComplexityProbe:
    def test_rows_and_monotone_time(self):
        cfg = TrainConfig(batch_size=100, survival_samples=2, learning_rate=0.01,
                          epochs=1, seed=0, val_fraction=0.0)
        gen = planted_config(n=12, mu_hot=0.5, mu_cold=0.01, horizon=50.0, seed=0)
        rows = step_complexity_probe(cfg, [400, 1600], gen)
        assert len(rows) == 2
        assert rows[0][0] < rows[1][0]
        assert 0.0 < rows[0][1] < rows[1][1]

    def test_fit_loglog_on_exact_line(self):
        rows = [(1000, 0.5), (10000, 5.0), (100000, 50.0)]
        slope, r2 = fit_loglog(rows)
        assert math.isclose(slope, 1.0, rel_tol=1e-12)
        assert math.isclose(r2, 1.0, abs_tol=1e-12)
