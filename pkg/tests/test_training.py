import numpy as np
import pytest

from fastbci.autograd import Tensor
from fastbci.dataset import Episode
from fastbci.errors import InsufficientDataError
from fastbci.model import build_classifier, save_model
from fastbci.optim import Adam, GradientDescent
from fastbci.params import ParamSet, params_equal
from fastbci.training import (
    MetaConfig,
    TransferConfig,
    classifier_loss,
    fomaml_meta_step,
    inner_adapt,
    maml_defaults,
    maml_pretrain,
    transfer_defaults,
    transfer_pretrain,
)

from synthdata import make_corpus, tiny_spec


# ----------------------------------------------------------------------
# analytic scaffolding: quadratic tasks over a single scalar parameter

def scalar_params(theta):
    ps = ParamSet()
    ps.add("theta", Tensor(np.asarray(float(theta)), requires_grad=True))
    return ps


def quadratic_loss(params, batch, rng=None):
    # L = (theta - target)^2, target carried in the batch inputs
    target = float(np.asarray(batch[0]).reshape(-1)[0])
    return (params["theta"] - target) ** 2


def scalar_episode(subject_id, support_target, query_target):
    one = lambda v: (np.asarray([[v]]), np.asarray([0]))
    sx, sy = one(support_target)
    qx, qy = one(query_target)
    return Episode(support_x=sx, support_y=sy, query_x=qx, query_y=qy,
                   subject_id=subject_id, activity=1)


def hand_adapt(theta, target, alpha, steps):
    for _ in range(steps):
        theta = theta - alpha * 2.0 * (theta - target)
    return theta


class TestInnerAdapt:
    def test_single_step_quadratic(self):
        ps = scalar_params(1.0)
        adapted = inner_adapt(ps, (np.asarray([[5.0]]), np.asarray([0])),
                              alpha=0.1, steps=1, loss_fn=quadratic_loss)
        assert adapted["theta"].item() == pytest.approx(1.8, abs=0)
        assert ps["theta"].item() == 1.0  # untouched

    def test_two_steps_quadratic(self):
        ps = scalar_params(1.0)
        adapted = inner_adapt(ps, (np.asarray([[5.0]]), np.asarray([0])),
                              alpha=0.1, steps=2, loss_fn=quadratic_loss)
        assert adapted["theta"].item() == pytest.approx(2.44, abs=1e-15)

    def test_zero_alpha_returns_equal_copy(self):
        ps = scalar_params(3.0)
        adapted = inner_adapt(ps, (np.asarray([[5.0]]), np.asarray([0])),
                              alpha=0.0, steps=4, loss_fn=quadratic_loss)
        assert adapted["theta"].item() == 3.0
        assert adapted is not ps

    def test_empty_support_rejected(self):
        with pytest.raises(InsufficientDataError):
            inner_adapt(scalar_params(0.0), (np.empty((0, 1)), np.empty(0)),
                        alpha=0.1, steps=1, loss_fn=quadratic_loss)

    def test_classifier_params_not_mutated(self):
        spec = tiny_spec()
        params = build_classifier(spec, np.random.default_rng(0))
        before = params.clone()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 8, 33))
        y = rng.integers(0, 2, size=6)
        inner_adapt(params, (x, y), alpha=0.05, steps=3,
                    rng=np.random.default_rng(2))
        assert params_equal(params, before)


class TestMetaStep:
    def test_matches_hand_computed_average_of_query_gradients(self):
        theta0, alpha, beta, steps = 1.25, 0.1, 0.05, 3
        tasks = [(7, 5.0, 4.0), (3, -2.0, -1.0)]
        ps = scalar_params(theta0)
        episodes = [scalar_episode(sid, a, b) for sid, a, b in tasks]
        loss = fomaml_meta_step(ps, episodes, inner_lr=alpha, adapt_steps=steps,
                                meta_optimizer=GradientDescent(ps, beta),
                                loss_fn=quadratic_loss)
        # brute-force oracle with plain floats
        grads, qlosses = [], []
        for _, a, b in tasks:
            phi = hand_adapt(theta0, a, alpha, steps)
            grads.append(2.0 * (phi - b))
            qlosses.append((phi - b) ** 2)
        expected = theta0 - beta * float(np.mean(grads))
        assert abs(ps["theta"].item() - expected) < 1e-10
        assert loss == pytest.approx(float(np.mean(qlosses)), abs=1e-12)

    def test_two_parameter_linear_task_oracle(self):
        # L(w, b) = (w*x + b - t)^2 with distinct support/query points
        def lin_loss(params, batch, rng=None):
            x, t = (float(v) for v in np.asarray(batch[0]).reshape(2))
            return (params["w"] * x + params["b"] - t) ** 2

        def episode(sid, xs, ts, xq, tq):
            pack = lambda x, t: (np.asarray([[x, t]]), np.asarray([0]))
            return Episode(*pack(xs, ts), *pack(xq, tq), subject_id=sid, activity=1)

        w0, b0, alpha, beta, steps = 0.5, -0.25, 0.05, 0.1, 2
        ps = ParamSet()
        ps.add("w", Tensor(np.asarray(w0), requires_grad=True))
        ps.add("b", Tensor(np.asarray(b0), requires_grad=True))
        eps = [episode(1, 1.0, 2.0, 1.5, 2.5), episode(2, -1.0, 0.5, -0.5, 1.0)]
        fomaml_meta_step(ps, eps, inner_lr=alpha, adapt_steps=steps,
                         meta_optimizer=GradientDescent(ps, beta),
                         loss_fn=lin_loss)

        def hand(task):
            xs, ts, xq, tq = task
            w, b = w0, b0
            for _ in range(steps):
                r = w * xs + b - ts
                w, b = w - alpha * 2 * r * xs, b - alpha * 2 * r
            rq = w * xq + b - tq
            return 2 * rq * xq, 2 * rq

        gw, gb = zip(hand((1.0, 2.0, 1.5, 2.5)), hand((-1.0, 0.5, -0.5, 1.0)))
        assert abs(ps["w"].item() - (w0 - beta * np.mean(gw))) < 1e-10
        assert abs(ps["b"].item() - (b0 - beta * np.mean(gb))) < 1e-10

    def test_zero_meta_lr_leaves_params(self):
        ps = scalar_params(2.0)
        fomaml_meta_step(ps, [scalar_episode(1, 5.0, 4.0)], inner_lr=0.1,
                         adapt_steps=2, meta_optimizer=GradientDescent(ps, 0.0),
                         loss_fn=quadratic_loss)
        assert ps["theta"].item() == 2.0

    def test_single_episode_through_adam(self):
        ps = scalar_params(1.0)
        lr = 0.01
        fomaml_meta_step(ps, [scalar_episode(1, 5.0, 4.0)], inner_lr=0.1,
                         adapt_steps=1, meta_optimizer=Adam(ps, lr),
                         loss_fn=quadratic_loss)
        phi = hand_adapt(1.0, 5.0, 0.1, 1)
        g = 2.0 * (phi - 4.0)
        expected = 1.0 - lr * g / (abs(g) + 1e-8)
        assert ps["theta"].item() == pytest.approx(expected, rel=1e-12)

    def test_episode_order_does_not_matter(self):
        episodes = [scalar_episode(sid, a, b)
                    for sid, a, b in [(4, 5.0, 4.0), (9, -2.0, -1.0), (1, 0.5, 3.0)]]

        def run(order):
            ps = scalar_params(1.0)
            fomaml_meta_step(ps, [episodes[i] for i in order], inner_lr=0.1,
                             adapt_steps=2, meta_optimizer=GradientDescent(ps, 0.05),
                             loss_fn=quadratic_loss)
            return ps["theta"].item()

        assert run([0, 1, 2]) == run([2, 0, 1]) == run([1, 2, 0])

    def test_no_adaptation_degenerates_to_pooled_batch_step(self):
        # with 0 adapt steps the meta gradient is the query gradient at the
        # starting point, so one meta step == one Adam step on the pooled
        # query batch (layer-norm model, dropout off, equal-size queries)
        spec = tiny_spec(dropout_p=0.0)
        init = build_classifier(spec, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        episodes = []
        for sid in (1, 2):
            qx = rng.normal(size=(4, 8, 33))
            qy = rng.integers(0, 2, size=4)
            episodes.append(Episode(
                support_x=qx, support_y=qy, query_x=qx, query_y=qy,
                subject_id=sid, activity=1))

        meta = init.clone()
        fomaml_meta_step(meta, episodes, inner_lr=0.1, adapt_steps=0,
                         meta_optimizer=Adam(meta, 0.01))

        pooled = init.clone()
        opt = Adam(pooled, 0.01)
        pooled.zero_grad()
        x = np.concatenate([ep.query_x for ep in episodes])
        y = np.concatenate([ep.query_y for ep in episodes])
        classifier_loss(pooled, (x, y)).backward()
        opt.step()

        for name, t in meta.items():
            np.testing.assert_allclose(t.data, pooled[name].data, atol=1e-12)


class TestConfigs:
    def test_meta_defaults_per_activity(self):
        c1 = maml_defaults(1)
        assert (c1.inner_lr, c1.meta_lr, c1.adapt_steps) == (0.01, 0.001, 10)
        c4 = maml_defaults(4)
        assert (c4.inner_lr, c4.meta_lr, c4.adapt_steps) == (0.001, 0.01, 5)
        assert c1.subjects_per_batch == 4
        assert (c1.k_support, c1.k_query) == (10, 11)

    def test_transfer_defaults_per_activity(self):
        assert transfer_defaults(1).batch_size == 32
        assert transfer_defaults(2).batch_size == 16
        assert transfer_defaults(3).batch_size == 32
        assert transfer_defaults(4).batch_size == 16
        assert transfer_defaults(2).lr == 0.001
        assert transfer_defaults(2).samples_per_class_per_subject == 21

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            MetaConfig(inner_lr=0.0, meta_lr=0.1)
        with pytest.raises(ValueError):
            MetaConfig(inner_lr=0.1, meta_lr=0.1, adapt_steps=0)
        with pytest.raises(ValueError):
            TransferConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TransferConfig(batch_size=1)


class TestPretrainLoops:
    def small_config(self):
        return MetaConfig(inner_lr=0.05, meta_lr=0.01, subjects_per_batch=2,
                          adapt_steps=2, k_support=4, k_query=4,
                          max_meta_iterations=6, eval_interval=3,
                          validation_patience=2, validation_steps=2)

    def corpus(self, seed=0):
        rng = np.random.default_rng(seed)
        train = make_corpus(rng, range(1, 5), n_per_class=10)
        val = make_corpus(rng, range(5, 7), n_per_class=10)
        return train, val

    def test_maml_pretrain_deterministic_checkpoint(self, tmp_path):
        spec = tiny_spec()
        train, val = self.corpus()

        def run():
            t, v = self.corpus()
            params, log_rows = maml_pretrain(spec, t, v, self.small_config(),
                                             np.random.default_rng(11))
            return params, log_rows

        p1, rows1 = run()
        p2, rows2 = run()
        assert params_equal(p1, p2)
        save_model(p1, tmp_path / "a.fabm")
        save_model(p2, tmp_path / "b.fabm")
        assert (tmp_path / "a.fabm").read_bytes() == (tmp_path / "b.fabm").read_bytes()
        assert len(rows1) == len(rows2) >= 3

    def test_maml_pretrain_requires_enough_subjects(self):
        spec = tiny_spec()
        rng = np.random.default_rng(0)
        train = make_corpus(rng, [1], n_per_class=10)  # one subject < batch of 2
        val = make_corpus(rng, [5], n_per_class=10)
        with pytest.raises(InsufficientDataError):
            maml_pretrain(spec, train, val, self.small_config(),
                          np.random.default_rng(1))

    def test_transfer_pretrain_loss_decreases_on_separable_pool(self):
        spec = tiny_spec(dropout_p=0.0)
        rng = np.random.default_rng(3)
        train = make_corpus(rng, range(1, 5), n_per_class=8, noise=0.2)
        val = make_corpus(rng, range(5, 7), n_per_class=8, noise=0.2)
        config = TransferConfig(lr=0.005, batch_size=8,
                                samples_per_class_per_subject=8,
                                max_epochs=5, validation_patience=5)
        params, rows = transfer_pretrain(spec, train, val, config,
                                         np.random.default_rng(4))
        losses = [r[1] for r in rows]
        assert losses[-1] < losses[0]
        assert len(rows) <= 5

    def test_transfer_pretrain_skips_short_subjects(self):
        spec = tiny_spec()
        rng = np.random.default_rng(5)
        train = make_corpus(rng, [1, 2], n_per_class=21)
        train[2] = make_corpus(rng, [2], n_per_class=5)[2]  # too few
        val = make_corpus(rng, [5], n_per_class=10)
        config = TransferConfig(lr=0.001, batch_size=8, max_epochs=1,
                                validation_patience=1)
        params, rows = transfer_pretrain(spec, train, val, config,
                                         np.random.default_rng(6))
        assert len(rows) == 1
