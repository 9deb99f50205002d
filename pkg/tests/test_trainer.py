import csv
import logging
import math

import numpy as np
import pytest

from dgqnet.checkpoint import load_checkpoint
from dgqnet.domainshift import TRAIN_DOMAINS, tag_batch
from dgqnet.encoder import DGQModel
from dgqnet.errors import ConfigError, ContractError
from dgqnet.synthgen import generate_clean
from dgqnet.tensor import Tensor
import dgqnet.trainer as trainer_mod
from dgqnet.trainer import (Adam, TrainConfig, fit, lambda_schedule,
                            train_step, write_log)

TINY = dict(feature_dim=8, stem_channels=4, blocks=[(1, 4, 1), (2, 8, 2)],
            qubits=2, depth=1, seed=0)


def tiny_model(**overrides):
    return DGQModel(**dict(TINY, **overrides))


def tiny_batch(n=4, seed=7):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1, 32, 32)) * 0.1 + 0.5
    y = rng.integers(0, 2, size=n)
    d = rng.integers(0, 3, size=n)
    return x, y, d


def toy_samples(count=32, seed=3, size=32):
    clean = generate_clean(count, seed=seed, size=size)
    return tag_batch(clean, TRAIN_DOMAINS, np.random.default_rng(11))


class TestLambdaSchedule:
    def test_zero_at_start(self):
        assert lambda_schedule(0.0) == 0.0

    def test_midpoint_value(self):
        # 2/(1+e^-5) - 1
        assert lambda_schedule(0.5, gamma=10.0) == pytest.approx(
            0.9866142981514303, abs=1e-12)

    def test_endpoint_below_one(self):
        lam = lambda_schedule(1.0, gamma=10.0)
        assert lam == pytest.approx(0.9999092042625951, abs=1e-12)
        assert lam < 1.0

    def test_strictly_increasing(self):
        grid = [lambda_schedule(p / 100.0) for p in range(101)]
        assert all(b > a for a, b in zip(grid, grid[1:]))

    def test_clamps_below_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="dgqnet.trainer"):
            assert lambda_schedule(-0.25) == 0.0
        assert "clamping" in caplog.text

    def test_clamps_above_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="dgqnet.trainer"):
            assert lambda_schedule(1.5) == lambda_schedule(1.0)
        assert "clamping" in caplog.text


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.epochs == 15
        assert cfg.batch_size == 8
        assert cfg.gamma == 10.0

    @pytest.mark.parametrize("kwargs", [
        dict(epochs=0),
        dict(batch_size=1),
        dict(w_dom=-0.1),
        dict(w_feat=-1e-9),
        dict(gamma=0.0),
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestAdam:
    def test_zero_lr_leaves_params_bit_identical(self):
        model = tiny_model()
        before = {name: t.data.copy() for name, t in model.parameters()}
        opt = Adam(model.parameters(), lr=0.0)
        x, y, d = tiny_batch()
        train_step(model, opt, x, y, d, 0.5, TrainConfig())
        for name, t in model.parameters():
            np.testing.assert_array_equal(t.data, before[name], err_msg=name)

    def test_skips_params_without_grad(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        idle = Tensor(np.array([5.0]), requires_grad=True)
        opt = Adam([("w", w), ("idle", idle)], lr=0.1)
        w.grad = np.array([1.0, -1.0])
        opt.step()
        assert idle.data[0] == 5.0
        assert w.data[0] < 1.0 and w.data[1] > 2.0

    def test_converges_on_quadratic(self):
        from dgqnet.tensor import sum_
        w = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([("w", w)], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            err = w + (-3.0)
            (err * err).backward()
            opt.step()
        assert abs(w.data[0] - 3.0) < 0.05


class TestTrainStep:
    def test_breakdown_identity(self):
        model = tiny_model()
        cfg = TrainConfig(w_dom=1.0, w_feat=1e-4)
        opt = Adam(model.parameters())
        x, y, d = tiny_batch()
        lam = 0.5
        out = train_step(model, opt, x, y, d, lam, cfg)
        recomposed = (out["loss_cls"] + cfg.w_dom * lam * out["loss_dom"]
                      + cfg.w_feat * out["loss_feat"])
        assert abs(out["total"] - recomposed) <= 1e-12

    def test_rejects_singleton_batch(self):
        model = tiny_model()
        opt = Adam(model.parameters())
        x, y, d = tiny_batch(n=1)
        with pytest.raises(ContractError, match="2"):
            train_step(model, opt, x, y, d, 0.0, TrainConfig())

    def test_accuracy_bounded(self):
        model = tiny_model()
        opt = Adam(model.parameters())
        x, y, d = tiny_batch(n=6)
        out = train_step(model, opt, x, y, d, 0.1, TrainConfig())
        assert 0.0 <= out["train_acc"] <= 1.0

    def test_lambda_zero_matches_adversarial_off(self):
        """At lam=0 the encoder feels no domain gradient, so everything
        except the discriminator evolves exactly as with the branch off."""
        runs = {}
        for flag in (True, False):
            model = tiny_model(use_adversarial=flag)
            opt = Adam(model.parameters())
            x, y, d = tiny_batch(n=4, seed=21)
            train_step(model, opt, x, y, d, 0.0, TrainConfig())
            runs[flag] = {name: t.data.copy() for name, t in model.parameters()}
        for name in runs[True]:
            if name.startswith("discriminator"):
                continue
            np.testing.assert_array_equal(runs[True][name], runs[False][name],
                                          err_msg=name)
        # negative control: the discriminator itself did train at lam=0
        assert any(
            not np.array_equal(runs[True][n], runs[False][n])
            for n in runs[True] if n.startswith("discriminator")
        )

    def test_w_dom_zero_omits_domain_branch(self):
        model = tiny_model()
        opt = Adam(model.parameters())
        before = {name: t.data.copy() for name, t in model.parameters()
                  if name.startswith("discriminator")}
        x, y, d = tiny_batch()
        out = train_step(model, opt, x, y, d, 0.9, TrainConfig(w_dom=0.0))
        assert out["loss_dom"] == 0.0
        for name, t in model.parameters():
            if name.startswith("discriminator"):
                np.testing.assert_array_equal(t.data, before[name])

    def test_non_finite_loss_aborts_with_breakdown(self):
        model = tiny_model()
        model.classifier.weight.data[:] = np.inf
        opt = Adam(model.parameters())
        x, y, d = tiny_batch()
        with np.errstate(invalid="ignore"):
            with pytest.raises(ContractError, match="loss_cls"):
                train_step(model, opt, x, y, d, 0.0, TrainConfig())


class TestFit:
    def test_ten_samples_batch_two_gives_five_steps(self, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=1, batch_size=2, seed=0)
        rows = fit(model, cfg, generate_clean(10, seed=1, size=32),
                   TRAIN_DOMAINS)
        assert len(rows) == 5
        assert [r["step"] for r in rows] == [0, 1, 2, 3, 4]

    def test_trailing_singleton_is_not_trained_alone(self):
        model = tiny_model()
        cfg = TrainConfig(epochs=1, batch_size=2, seed=0)
        # 11 samples: the odd one folds into the previous batch
        rows = fit(model, cfg, generate_clean(11, seed=1, size=32),
                   TRAIN_DOMAINS)
        assert len(rows) == 5

    def test_lambda_column_nondecreasing(self):
        model = tiny_model()
        cfg = TrainConfig(epochs=2, batch_size=4, seed=0)
        rows = fit(model, cfg, generate_clean(8, seed=2, size=32),
                   TRAIN_DOMAINS)
        lams = [r["lambda"] for r in rows]
        assert all(b >= a for a, b in zip(lams, lams[1:]))
        assert lams[0] == 0.0

    def test_deterministic_across_runs(self):
        def run():
            model = tiny_model()
            cfg = TrainConfig(epochs=2, batch_size=4, seed=42)
            fit(model, cfg, generate_clean(20, seed=5, size=32), TRAIN_DOMAINS)
            return model
        a, b = run(), run()  # 10 steps each
        for (name, ta), (_, tb) in zip(a.named_arrays(), b.named_arrays()):
            np.testing.assert_array_equal(ta, tb, err_msg=name)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError, match="empty"):
            fit(tiny_model(), TrainConfig(), [], TRAIN_DOMAINS)

    def test_log_and_checkpoint_outputs(self, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=1, batch_size=4, seed=9)
        log_path = tmp_path / "train.csv"
        ckpt_path = tmp_path / "model.dgq"
        rows = fit(model, cfg, generate_clean(8, seed=4, size=32),
                   TRAIN_DOMAINS, log_path=log_path, checkpoint_path=ckpt_path)

        with open(log_path, newline="") as f:
            lines = f.read().splitlines()
        assert lines[0] == "step,lambda,loss_cls,loss_dom,loss_feat,train_acc"
        assert len(lines) == len(rows) + 1
        parsed = list(csv.DictReader(lines))
        assert [int(r["step"]) for r in parsed] == [r["step"] for r in rows]
        for r in parsed:
            for key in ("lambda", "loss_cls", "loss_dom", "loss_feat",
                        "train_acc"):
                float(r[key])

        stored = load_checkpoint(ckpt_path)
        live = dict(model.named_arrays())
        assert set(stored) == set(live)
        for name, arr in stored.items():
            np.testing.assert_array_equal(arr, live[name], err_msg=name)

    def test_final_weights_average_the_last_epoch(self, monkeypatch):
        """The model left behind is the mean over the final epoch's
        iterates, batch statistics included, not the last step alone."""
        snaps = []
        real_step = trainer_mod.train_step

        def recording(model, *args, **kwargs):
            out = real_step(model, *args, **kwargs)
            snaps.append({n: a.copy() for n, a in model.named_arrays()})
            return out

        monkeypatch.setattr(trainer_mod, "train_step", recording)
        model = tiny_model()
        cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
        fit(model, cfg, generate_clean(12, seed=7, size=32), TRAIN_DOMAINS)
        assert len(snaps) == 6
        tail = snaps[3:]
        live = dict(model.named_arrays())
        for name, arr in live.items():
            mean = np.mean([s[name] for s in tail], axis=0)
            np.testing.assert_allclose(arr, mean, atol=1e-12, err_msg=name)
        # a moving trajectory means the mean differs from the last iterate
        last = snaps[-1]
        assert any(not np.array_equal(live[n], last[n]) for n in live)

    def test_plain_supervised_loss_decreases(self):
        """w_dom=0, w_feat=0, quantum off reduces to CE training; the loss
        must come down over 50 steps on a small fixed set."""
        model = tiny_model(use_quantum=False, use_adversarial=False)
        cfg = TrainConfig(epochs=13, batch_size=8, w_dom=0.0, w_feat=0.0,
                          use_quantum=False, use_adversarial=False, seed=0)
        rows = fit(model, cfg, generate_clean(32, seed=6, size=32),
                   TRAIN_DOMAINS)
        assert len(rows) >= 50
        head = np.mean([r["loss_cls"] for r in rows[:5]])
        tail = np.mean([r["loss_cls"] for r in rows[-5:]])
        assert tail < head

    def test_progress_spans_epochs(self):
        model = tiny_model()
        cfg = TrainConfig(epochs=3, batch_size=4, seed=1)
        rows = fit(model, cfg, generate_clean(8, seed=8, size=32),
                   TRAIN_DOMAINS)
        # 6 steps: last step sits at p = 5/6, short of 1
        assert rows[-1]["lambda"] < lambda_schedule(1.0)
        assert rows[-1]["lambda"] == pytest.approx(
            lambda_schedule(5.0 / 6.0), abs=1e-15)
