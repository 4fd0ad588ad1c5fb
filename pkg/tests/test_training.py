"""Training-loop tests: optimizer arithmetic, strategy loss values on
constant models (hand-computable), gradient routing invariants, and
run-level behavior (determinism, divergence)."""

import numpy as np
import pytest

from cyclereg.autodiff import Tape
from cyclereg.data import build_dataset
from cyclereg.models import ModelPair, build_mlp, build_pair, mlp_spec
from cyclereg.training import (
    Adam,
    ConfigError,
    Sgd,
    TrainingPlan,
    batch_size,
    clip_gradients,
    _apply_weight_decay,
    _step_on,
    pair_params,
    strategy_losses,
    train_run,
    train_step,
    validate_plan,
    write_metrics_csv,
)


def const_model(value, dim=1):
    """Affine 1-layer model computing the constant `value` (w=0, b=value)."""
    m = build_mlp(mlp_spec([dim, dim], seed=0, batchnorm=False))
    m.params["layer0.w"][:] = 0.0
    m.params["layer0.b"][:] = value
    return m


def identity_model(dim=1):
    m = build_mlp(mlp_spec([dim, dim], seed=0, batchnorm=False))
    m.params["layer0.w"][:] = np.eye(dim)
    m.params["layer0.b"][:] = 0.0
    return m


def loss_values(pair, x, y, plan):
    tape = Tape()
    out = strategy_losses(tape, pair, x, y, plan, True, True)
    return {k: float(tape.value(v)) for k, v in out.items()}


XB = np.zeros((2, 1))
YB = np.ones((2, 1))


class TestPlanValidation:
    def test_defaults_pass(self):
        validate_plan(TrainingPlan())

    @pytest.mark.parametrize("kw", [
        dict(strategy="cyclegan"),
        dict(loss="l3"),
        dict(cycle_loss="huber"),
        dict(optimizer="rmsprop"),
        dict(update_mode="alternating"),
        dict(learning_rate=0.0),
        dict(learning_rate=-1e-3),
        dict(weight_decay=-0.1),
        dict(clip_norm=0.0),
        dict(epochs=0),
        dict(epochs=2.5),
        dict(batch_fraction=0.01),
        dict(batch_fraction=0.6),
        dict(alpha_f=0.5),
        dict(alpha_b=3.5),
        dict(beta_f=-0.1),
        dict(beta_b=1.5),
        dict(seed=-1),
    ])
    def test_rejects_out_of_range(self, kw):
        with pytest.raises(ConfigError):
            validate_plan(TrainingPlan(**kw))

    def test_cycle_loss_falls_back_to_main_loss(self):
        assert TrainingPlan(loss="l1").resolved_cycle_loss() == "l1"
        assert TrainingPlan(loss="l2", cycle_loss="l1").resolved_cycle_loss() == "l1"

    def test_default_learning_rates(self):
        assert TrainingPlan(optimizer="adam").resolved_lr() == 1e-3
        assert TrainingPlan(optimizer="sgd").resolved_lr() == 1e-2
        assert TrainingPlan(optimizer="sgd", learning_rate=0.5).resolved_lr() == 0.5


class TestBatchSize:
    def test_values(self):
        assert batch_size(1000, 0.1) == 100
        assert batch_size(100, 0.02) == 2
        assert batch_size(10, 0.02) == 2   # floor of 2 rows
        assert batch_size(7, 0.5) == 4


class TestOptimizers:
    def test_sgd_step_value(self):
        # p - lr*g = 1 - 0.1*2 = 0.8
        p = {"k": np.array([1.0])}
        Sgd(lr=0.1).step(p, {"k": np.array([2.0])})
        assert p["k"][0] == pytest.approx(0.8, abs=1e-15)

    def test_sgd_updates_in_place_through_views(self):
        w = np.arange(6.0).reshape(2, 3)
        Sgd(lr=1.0).step({"w": w}, {"w": np.ones((2, 3))})
        assert np.array_equal(w, np.arange(6.0).reshape(2, 3) - 1.0)

    def test_adam_first_step_is_nearly_lr_sized(self):
        # bias correction makes mhat=g, vhat=g^2 on step one, so the update
        # is lr*g/(|g|+eps): within 1e-10 of lr in magnitude
        p = {"k": np.array([0.0])}
        Adam(lr=1e-3).step(p, {"k": np.array([3.0])})
        assert abs(p["k"][0] + 1e-3) < 1e-10

    def test_adam_counts_steps_per_key(self):
        opt = Adam(lr=1e-3)
        pa = {"a": np.zeros(1), "b": np.zeros(1)}
        opt.step(pa, {"a": np.array([1.0])})
        opt.step(pa, {"a": np.array([1.0]), "b": np.array([1.0])})
        assert opt.t == {"a": 2, "b": 1}
        # key b is on its own first step: same near-lr magnitude as a fresh key
        assert abs(pa["b"][0] + 1e-3) < 1e-10


class TestGradientHygiene:
    def test_clip_rescales_to_max_norm(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = clip_gradients(g, 2.0)
        assert norm == pytest.approx(5.0, abs=1e-12)
        assert g["a"][0] == pytest.approx(1.2, abs=1e-12)
        assert g["b"][0] == pytest.approx(1.6, abs=1e-12)
        total = np.sqrt(g["a"][0] ** 2 + g["b"][0] ** 2)
        assert total == pytest.approx(2.0, abs=1e-12)

    def test_clip_leaves_small_gradients_alone(self):
        g = {"a": np.array([0.3, 0.4])}
        norm = clip_gradients(g, 10.0)
        assert norm == pytest.approx(0.5, abs=1e-12)
        assert np.array_equal(g["a"], [0.3, 0.4])

    def test_weight_decay_touches_weight_matrices_only(self):
        params = {"m.layer0.w": np.array([[2.0]]), "m.layer0.b": np.array([3.0]),
                  "m.layer0.gamma": np.array([4.0])}
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        _apply_weight_decay(grads, params, 0.5)
        assert grads["m.layer0.w"][0, 0] == 1.0
        assert grads["m.layer0.b"][0] == 0.0
        assert grads["m.layer0.gamma"][0] == 0.0


class TestStrategyLossValues:
    """Constant models collapse every composition, so each loss value is a
    one-line hand computation."""

    def setup_method(self):
        # phi(x) = 0.5 everywhere, psi(y) = 0.25 everywhere
        self.pair = ModelPair(const_model(0.5), const_model(0.25))

    def test_perfect_identity_pair_has_zero_losses(self):
        pair = ModelPair(identity_model(), identity_model())
        x = np.linspace(-1, 1, 8).reshape(-1, 1)
        for strat in ("baseline", "ucm", "ucm_hybrid", "jcm"):
            vals = loss_values(pair, x, x, TrainingPlan(strategy=strat))
            for k, v in vals.items():
                assert v == 0.0, (strat, k)

    def test_baseline_values(self):
        v = loss_values(self.pair, XB, YB, TrainingPlan(strategy="baseline"))
        assert v["f"] == pytest.approx(0.25, abs=1e-15)     # (1-0.5)^2
        assert v["b"] == pytest.approx(0.0625, abs=1e-15)   # (0-0.25)^2

    def test_ucm_backward_is_cycle_reconstruction(self):
        v = loss_values(self.pair, XB, YB, TrainingPlan(strategy="ucm"))
        assert v["f"] == pytest.approx(0.25, abs=1e-15)
        assert v["b"] == pytest.approx(0.25, abs=1e-15)     # (1 - phi(psi(1)))^2

    def test_hybrid_backward_averages_cycle_and_direct(self):
        v = loss_values(self.pair, XB, YB, TrainingPlan(strategy="ucm_hybrid"))
        assert v["b_cycle"] == pytest.approx(0.25, abs=1e-15)
        assert v["b_direct"] == pytest.approx(0.0625, abs=1e-15)
        assert v["b"] == pytest.approx((0.25 + 0.0625) / 2, abs=1e-15)

    def test_jcm_unweighted(self):
        plan = TrainingPlan(strategy="jcm", alpha_f=1, alpha_b=1, beta_f=0, beta_b=0)
        v = loss_values(self.pair, XB, YB, plan)
        assert v["f"] == pytest.approx(0.0625, abs=1e-15)   # (0 - psi(phi(0)))^2
        assert v["b"] == pytest.approx(0.25, abs=1e-15)     # (1 - phi(psi(1)))^2
        assert v["total"] == pytest.approx(0.15625, abs=1e-15)

    def test_jcm_weighted(self):
        # constants collapse the double cycle onto the single one, so
        # f = (2 + 0.5)*0.0625, b = (2 + 0.5)*0.25
        plan = TrainingPlan(strategy="jcm", alpha_f=2, alpha_b=2,
                            beta_f=0.5, beta_b=0.5)
        v = loss_values(self.pair, XB, YB, plan)
        assert v["f"] == pytest.approx(0.15625, abs=1e-15)
        assert v["b"] == pytest.approx(0.625, abs=1e-15)
        assert v["total"] == pytest.approx(0.390625, abs=1e-15)

    def test_hybrid_mean_is_structural_on_random_models(self):
        pair = build_pair(1, 1, phi_seed=7, psi_seed=8, hidden=(8, 8))
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(16, 1)), rng.normal(size=(16, 1))
        tape = Tape()
        out = strategy_losses(tape, pair, x, y, TrainingPlan(strategy="ucm_hybrid"),
                              True, True)
        lhs = float(tape.value(out["b"]))
        rhs = 0.5 * (float(tape.value(out["b_cycle"])) + float(tape.value(out["b_direct"])))
        assert lhs == pytest.approx(rhs, rel=1e-15)


def snapshot(model):
    return ({k: v.copy() for k, v in model.params.items()},
            {i: (s.mean.copy(), s.var.copy()) for i, s in model.bn_states.items()})


def assert_model_unchanged(model, snap):
    params, stats = snap
    for k, v in model.params.items():
        assert np.array_equal(v, params[k]), k
    for i, s in model.bn_states.items():
        assert np.array_equal(s.mean, stats[i][0]) and np.array_equal(s.var, stats[i][1]), i


class TestGradientRouting:
    def test_ucm_backward_step_freezes_forward_model(self):
        # the dedicated backward step of stepwise UCM must leave phi
        # bit-identical, running batchnorm statistics included
        pair = build_pair(1, 1, phi_seed=1, psi_seed=2, hidden=(16, 16))
        plan = validate_plan(TrainingPlan(strategy="ucm", update_mode="stepwise",
                                          optimizer="sgd"))
        params = pair_params(pair)
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(12, 1)), rng.normal(size=(12, 1))
        before_phi = snapshot(pair.phi)
        before_psi = snapshot(pair.psi)
        tape = Tape()
        out = strategy_losses(tape, pair, x, y, plan, None, True)
        _step_on(tape, out["b"], ("psi.",), params, plan, Sgd(lr=0.05))
        assert_model_unchanged(pair.phi, before_phi)
        changed = any(not np.array_equal(pair.psi.params[k], before_psi[0][k])
                      for k in pair.psi.params)
        assert changed

    def test_hybrid_cycle_coupling_follows_the_step_kind(self):
        # a merged step couples phi into the hybrid's cycle term; the
        # dedicated stepwise cycle refinement leaves phi bit-identical,
        # running batchnorm statistics included
        def cycle_step(phi_train, keep):
            pair = build_pair(1, 1, phi_seed=1, psi_seed=2, hidden=(16, 16))
            plan = validate_plan(TrainingPlan(strategy="ucm_hybrid",
                                              optimizer="sgd"))
            params = pair_params(pair)
            rng = np.random.default_rng(0)
            x, y = rng.normal(size=(12, 1)), rng.normal(size=(12, 1))
            before = snapshot(pair.phi)
            tape = Tape()
            out = strategy_losses(tape, pair, x, y, plan, phi_train, {"cycle"})
            _step_on(tape, out["b_cycle"], keep, params, plan, Sgd(lr=0.05))
            return pair, before

        pair, before = cycle_step(True, ("phi.", "psi."))
        moved = any(not np.array_equal(pair.phi.params[k], before[0][k])
                    for k in pair.phi.params)
        assert moved
        pair, before = cycle_step(None, ("psi.",))
        assert_model_unchanged(pair.phi, before)

    def test_ucm_forward_update_matches_baseline_forward_update(self):
        # with clipping out of the way, the phi update under simultaneous UCM
        # must equal the baseline one: the cycle term contributes nothing to phi
        xs = np.random.default_rng(5).normal(size=(20, 1))
        ys = np.random.default_rng(6).normal(size=(20, 1))
        results = {}
        for strat in ("baseline", "ucm"):
            pair = build_pair(1, 1, phi_seed=11, psi_seed=12, hidden=(16, 16))
            plan = validate_plan(TrainingPlan(strategy=strat, optimizer="sgd",
                                              learning_rate=0.05, clip_norm=1e9))
            opt = Sgd(lr=0.05)
            train_step(pair, pair_params(pair), xs, ys, plan, opt,
                       np.random.default_rng(0))
            results[strat] = {k: v.copy() for k, v in pair.phi.params.items()}
        for k in results["baseline"]:
            assert np.array_equal(results["baseline"][k], results["ucm"][k]), k


class TestRuns:
    def small(self, **kw):
        return build_dataset("x_squared", 200, seed=3, **kw)

    def test_baseline_learns_a_little(self):
        ds = self.small()
        pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=13, psi_seed=14,
                          hidden=(32, 32))
        plan = TrainingPlan(strategy="baseline", epochs=20, batch_fraction=0.25)
        res = train_run(pair, ds, plan)
        assert res.status == "ok"
        assert len(res.records) == 20
        assert res.records[-1].loss_forward < res.records[0].loss_forward

    def test_training_is_deterministic(self):
        ds = self.small(decouple=True)
        finals = []
        for _ in range(2):
            pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=21, psi_seed=22,
                              hidden=(16, 16))
            plan = TrainingPlan(strategy="jcm", epochs=3, batch_fraction=0.25,
                                seed=9)
            res = train_run(pair, ds, plan)
            finals.append((res, pair_params(pair)))
        ra, rb = finals[0][0], finals[1][0]
        assert [r.loss_total for r in ra.records] == [r.loss_total for r in rb.records]
        for k in finals[0][1]:
            assert np.array_equal(finals[0][1][k], finals[1][1][k]), k

    def test_update_modes_actually_differ(self):
        ds = self.small()
        outs = []
        for mode in ("simultaneous", "stepwise"):
            pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=31, psi_seed=32,
                              hidden=(16, 16))
            plan = TrainingPlan(strategy="ucm_hybrid", epochs=2,
                                batch_fraction=0.25, update_mode=mode)
            train_run(pair, ds, plan)
            outs.append(pair_params(pair))
        same = all(np.array_equal(outs[0][k], outs[1][k]) for k in outs[0])
        assert not same

    def test_divergence_is_a_structured_outcome(self):
        ds = self.small()
        pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=41, psi_seed=42,
                          hidden=(16, 16), batchnorm=False)
        plan = TrainingPlan(strategy="baseline", optimizer="sgd",
                            learning_rate=1e155, epochs=5, batch_fraction=0.5)
        res = train_run(pair, ds, plan)
        assert res.status == "diverged"
        assert res.diverged_at is not None
        assert len(res.records) < 5

    def test_metrics_csv_round_trip(self, tmp_path):
        ds = self.small()
        pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=1, psi_seed=2, hidden=(8,))
        res = train_run(pair, ds, TrainingPlan(epochs=3, batch_fraction=0.5))
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, res.records)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,loss_forward,loss_backward,loss_total,wall_ms"
        assert len(lines) == 4
        cells = lines[1].split(",")
        assert int(cells[0]) == 0
        assert float(cells[1]) == res.records[0].loss_forward
