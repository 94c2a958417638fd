import math

import numpy as np
import pytest

from trml.dataset import SyntheticConfig, build_missingness_plan, generate_synthetic
from trml.errors import ConfigError, DataError, DivergenceError
from trml.evaluation import evaluate
from trml.model import init_params
from trml.trainer import TrainConfig, hyper_for, load_checkpoint, save_checkpoint, sweep_tau, train


def _small(**kw):
    syn = SyntheticConfig(d=6, latent_k=3, n_frames=3, n_train=24, n_valid=8, n_test=8, seed=3)
    base = dict(synthetic=syn, epochs=3, batch_size=8, lr=1e-3, setting="B", p=0.5)
    base.update(kw)
    return TrainConfig(**base)


def _same_params(a, b):
    va, vb = a.store.values(), b.store.values()
    return va.keys() == vb.keys() and all(np.array_equal(va[k], vb[k]) for k in va)


class TestConfig:
    def test_defaults_validate(self):
        TrainConfig().validate()

    @pytest.mark.parametrize("kw", [dict(setting="C"), dict(victim="audio"), dict(p=1.5), dict(batch_size=1),
                                    dict(epochs=-1), dict(lr=0.0), dict(lam=1.0), dict(alpha=-1.0),
                                    dict(tau=2.0), dict(ablation="nope"), dict(task_loss="huber")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_round_trip(self):
        cfg = _small(seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_unknown_synthetic_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"synthetic": {"dims": 4}})


class TestTrain:
    def test_zero_epochs_returns_init(self):
        cfg = _small(epochs=0)
        ds = generate_synthetic(cfg.synthetic)
        params, tlog = train(cfg, ds)
        assert tlog.epochs == [] and tlog.best_epoch is None
        assert _same_params(params, init_params(hyper_for(cfg, ds), cfg.seed, cfg.tau))

    def test_deterministic(self, tmp_path):
        cfg = _small()
        for name in ("a", "b"):
            params, tlog = train(cfg)
            save_checkpoint(params, tmp_path / f"{name}.trml", cfg.to_dict())
            (tmp_path / f"{name}.csv").write_text(tlog.to_csv())
        assert (tmp_path / "a.trml").read_bytes() == (tmp_path / "b.trml").read_bytes()

    def test_seed_changes_result(self):
        a, _ = train(_small(seed=0))
        b, _ = train(_small(seed=1))
        assert not _same_params(a, b)

    def test_log_and_best_epoch(self):
        _, tlog = train(_small(epochs=4))
        assert [e.epoch for e in tlog.epochs] == [0, 1, 2, 3]
        vals = [e.val_metric for e in tlog.epochs]
        assert tlog.best_epoch == int(np.argmin(vals))
        header = tlog.to_csv().splitlines()[0]
        assert header == "epoch,task_loss,sml_text,sml_visual,sml,total,val_metric,tau"

    def test_returned_params_are_best_epoch(self):
        cfg = _small(epochs=4)
        ds = generate_synthetic(cfg.synthetic)
        plan = build_missingness_plan(ds, cfg.setting, cfg.victim, cfg.p, cfg.seed)
        params, tlog = train(cfg, ds, plan)
        rep = evaluate(params, ds, plan, "valid")
        assert rep.mae == tlog.epochs[tlog.best_epoch].val_metric

    def test_total_matches_breakdown(self):
        _, tlog = train(_small(epochs=2, lam=0.3, alpha=0.7))
        for e in tlog.epochs:
            assert e.sml == pytest.approx(0.3 * e.sml_text + 0.7 * e.sml_visual, rel=1e-12)
            assert e.total == pytest.approx(e.task_loss + 0.7 * e.sml, rel=1e-12)

    def test_fixed_tau_stays(self):
        params, tlog = train(_small(tau=0.37, tau_learnable=False))
        assert params.tau == pytest.approx(0.37, abs=1e-15)
        assert all(e.tau == pytest.approx(0.37, abs=1e-15) for e in tlog.epochs)

    def test_learnable_tau_moves(self):
        params, _ = train(_small(tau=0.37, epochs=3))
        assert params.tau != pytest.approx(0.37, abs=1e-9)

    def test_no_sml_reports_zero_weight(self):
        _, tlog = train(_small(ablation="no_sml", epochs=2))
        for e in tlog.epochs:
            assert e.total == pytest.approx(e.task_loss, rel=1e-12)

    def test_overfit_eight_samples(self):
        syn = SyntheticConfig(d=8, latent_k=3, n_frames=3, n_train=8, n_valid=4, n_test=4, seed=0)
        cfg = TrainConfig(synthetic=syn, setting="B", p=1.0, batch_size=8, epochs=500, lr=1e-3)
        _, tlog = train(cfg)
        assert tlog.epochs[-1].total < 0.2 * tlog.epochs[0].total

    def test_divergence(self):
        cfg = _small(epochs=2)
        ds = generate_synthetic(cfg.synthetic)
        ds.records[0].label = 1e9
        with pytest.raises(DivergenceError) as info:
            train(cfg, ds)
        assert info.value.exit_code == 4 and info.value.last_good is not None

    def test_classification(self):
        syn = SyntheticConfig(d=6, latent_k=3, n_frames=3, n_train=24, n_valid=8, n_test=8, task="classification")
        params, tlog = train(TrainConfig(synthetic=syn, epochs=2, batch_size=8, setting="B", p=0.5))
        assert params.hyper.out_dim == 2 and tlog.val_metric_name == "acc"


class TestSweep:
    def test_cardinality(self):
        rows = sweep_tau(_small(epochs=1), [0.1, 0.5, 0.9])
        assert [r["tau"] for r in rows] == [0.1, 0.5, 0.9]
        assert all(r["n"] == 8 and math.isfinite(r["mae"]) for r in rows)

    def test_single_value_matches_fixed_tau_training(self):
        cfg = _small(epochs=2)
        ds = generate_synthetic(cfg.synthetic)
        row = sweep_tau(cfg, [0.4], dataset=ds)[0]
        fixed = TrainConfig.from_dict({**cfg.to_dict(), "tau": 0.4, "tau_learnable": False})
        plan = build_missingness_plan(ds, cfg.setting, cfg.victim, cfg.p, cfg.seed)
        params, _ = train(fixed, ds, plan)
        assert row["mae"] == evaluate(params, ds, plan, "test").mae

    @pytest.mark.parametrize("values", [[], [0.001], [1.5]])
    def test_bad_values(self, values):
        with pytest.raises(ConfigError):
            sweep_tau(_small(), values)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        params, _ = train(_small(epochs=1))
        save_checkpoint(params, tmp_path / "c.trml", {"seed": 0})
        back = load_checkpoint(tmp_path / "c.trml")
        assert _same_params(params, back)
        assert back.hyper == params.hyper and back.store.step_count == params.store.step_count

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "nope.trml")

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.trml").write_text("hello\n")
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "c.trml")

    def test_truncated_values(self, tmp_path):
        params, _ = train(_small(epochs=0))
        save_checkpoint(params, tmp_path / "c.trml")
        lines = (tmp_path / "c.trml").read_text().splitlines()
        lines[1] = " ".join(lines[1].split()[:-1])
        (tmp_path / "c.trml").write_text("\n".join(lines))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "c.trml")
