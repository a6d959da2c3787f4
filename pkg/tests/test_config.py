import json

import pytest

from vqel.config import ExperimentConfig, Variant
from vqel.errors import ConfigError


class TestValidation:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.K, cfg.L, cfg.batch, cfg.eval_batch) == (10, 4, 32, 100)
        assert (cfg.epochs_self, cfg.epochs_mutual, cfg.epochs_baseline) == (50, 50, 100)
        assert cfg.weight_decay == 1e-5
        assert cfg.mutual_lr == cfg.lr

    @pytest.mark.parametrize("changes", [
        {"K": 0}, {"L": 0}, {"batch": 0}, {"epochs_self": -1}, {"lr": 0.0},
        {"tau_sample": -1.0}, {"method": "LSTM"}, {"variant": "SP"}, {"metric": "L1"},
        {"seeds": []}, {"ema_decay": 1.0},
    ])
    def test_rejected(self, changes):
        with pytest.raises(ConfigError):
            ExperimentConfig(**changes)

    def test_mp_only_cannot_freeze_sender(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(variant="MP_only", sender_update="Frozen")

    def test_baselines_have_no_self_play(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(method="GS_ST", variant="SP_S_MP")
        ExperimentConfig(method="GS_ST", variant="MP_only")

    def test_frozen_receiver_needs_receiver_self_play(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(variant="SP_S_MP", receiver_update="Frozen")
        ExperimentConfig(variant="SP_R_MP", receiver_update="Frozen")

    def test_variant_phases(self):
        assert Variant("SP_SR_MP").sender_self_play and Variant("SP_SR_MP").receiver_self_play
        assert not Variant("SP_S").mutual_play
        assert not Variant("MP_only").sender_self_play


class TestSerialisation:
    def test_dict_round_trip(self):
        cfg = ExperimentConfig(variant="SP_R_MP", lr_mutual=3e-4, seeds=[4, 5])
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"learning_rate": 1.0})

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"beta": 0.5, "d": 32}))
        cfg = ExperimentConfig.load(path, {"d": 16})
        assert cfg.beta == 0.5 and cfg.d == 16

    def test_load_malformed(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{beta: ")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_fingerprint(self):
        a = ExperimentConfig()
        assert a.fingerprint() == ExperimentConfig(output_dir="elsewhere", seeds=[9]).fingerprint()
        assert a.fingerprint() != ExperimentConfig(beta=0.3).fingerprint()
        assert len(a.fingerprint()) == 16
