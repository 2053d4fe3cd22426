import json
from pathlib import Path

import pytest

from cnnbench.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from cnnbench.config import config_from_dict, full_study_config, load_config, parse_member
from cnnbench.errors import ParseError, ValidationError

REPO = Path(__file__).resolve().parents[1]


def minimal(**kw):
    raw = {"spec_version": 1, "dataset_root": "data", "runs": [{"arch": "ResNet18", "mode": "scratch"}]}
    raw.update(kw)
    return raw


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict(minimal())
        assert cfg.training.max_epochs == 175 and cfg.training.patience == 10
        assert cfg.training.learning_rate == 1e-4 and cfg.training.batch_size == 32
        assert cfg.training.optimizer == "adam" and cfg.training.monitor == "val_loss"
        assert (cfg.split.train_frac, cfg.split.val_frac, cfg.split.test_frac) == (0.7, 0.15, 0.15)
        assert cfg.augmentation.variants_per_image == 10
        assert cfg.split.seed == cfg.training.seed == cfg.augmentation.seed == 42
        assert cfg.eval_split == "test" and not cfg.augment_eval

    def test_global_seed_propagates(self):
        cfg = config_from_dict(minimal(global_seed=7, training={"seed": 3}))
        assert cfg.split.seed == 7 and cfg.training.seed == 3

    def test_undeclared_member(self):
        with pytest.raises(ValidationError) as exc:
            config_from_dict(minimal(ensembles=[{"name": "DIR"}]))
        assert any("InceptionV3:scratch" in p for p in exc.value.problems)

    def test_collects_every_problem(self):
        raw = minimal(bogus=1, training={"batch_size": 0}, split={"train_frac": 0.9})
        with pytest.raises(ValidationError) as exc:
            config_from_dict(raw)
        text = " ".join(exc.value.problems)
        assert "bogus" in text and "batch_size" in text and "split" in text

    @pytest.mark.parametrize("runs", [[], [{"arch": "AlexNet"}], [{"arch": "ResNet18", "mode": "finetune"}],
                                      [{"arch": "ResNet18"}, {"arch": "resnet-18"}]])
    def test_bad_runs(self, runs):
        with pytest.raises(ValidationError):
            config_from_dict(minimal(runs=runs))

    def test_hash_ignores_output_location(self):
        a = config_from_dict(minimal(output_dir="x", parallelism=2))
        b = config_from_dict(minimal(output_dir="y"))
        c = config_from_dict(minimal(global_seed=1))
        assert a.config_hash == b.config_hash != c.config_hash
        assert len(a.config_hash) == 16

    def test_round_trip(self):
        cfg = config_from_dict(full_study_config())
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_member_parsing(self):
        assert parse_member("densenet-121") == "DenseNet121:scratch"
        assert parse_member("ResNet18:transfer") == "ResNet18:transfer"

    def test_full_study_plan(self):
        cfg = config_from_dict(full_study_config())
        plan = cfg.comparison_plan()
        assert len(plan) == 13 and plan[-1] == "DIR:ensemble"
        assert {r.mode for r in cfg.runs} == {"scratch", "transfer"}
        assert cfg.ensembles[0].members == ("DenseNet121:scratch", "InceptionV3:scratch", "ResNet18:scratch")

    def test_shipped_configs_load(self):
        full = load_config(REPO / "configs" / "full_study.json")
        assert full.comparison_plan() == config_from_dict(full_study_config()).comparison_plan()
        assert Path(full.dataset_root) == REPO / "data" / "breast_histology"
        desk = load_config(REPO / "configs" / "desk.json")
        assert len(desk.comparison_plan()) == 4

    def test_parse_error(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            load_config(p)
        with pytest.raises(ParseError):
            load_config(tmp_path / "missing.json")

    def test_overrides(self):
        cfg = config_from_dict(minimal()).with_overrides(seed=9, augment_eval=True)
        assert cfg.global_seed == cfg.split.seed == cfg.training.seed == 9
        assert cfg.augment_eval


class TestCli:
    def write(self, tmp_path, raw):
        p = tmp_path / "config.json"
        p.write_text(json.dumps(raw))
        return str(p)

    def test_config_error_exit(self, tmp_path, capsys):
        path = self.write(tmp_path, minimal(runs=[]))
        assert main(["prepare", "--config", path]) == EXIT_CONFIG
        assert "runs" in capsys.readouterr().err

    def test_bad_json_exit(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[")
        assert main(["run", "--config", str(p)]) == EXIT_CONFIG

    def test_missing_data_exit(self, tmp_path):
        assert main(["prepare", "--config", self.write(tmp_path, minimal(dataset_root="nowhere"))]) == EXIT_DATA

    def test_undeclared_runs_flag(self, tmp_path):
        path = self.write(tmp_path, minimal())
        assert main(["train", "--config", path, "--runs", "VGG19:scratch"]) == EXIT_CONFIG

    def test_prepare_ok(self, tmp_path, synthetic_root, capsys):
        raw = minimal(dataset_root=str(synthetic_root), output_dir=str(tmp_path / "out"),
                      augmentation={"variants_per_image": 1})
        assert main(["prepare", "--config", self.write(tmp_path, raw)]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("benign:") and "malignant:" in out
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert sum(1 for s in manifest["samples"] if s["origin"] == "augmented") == 140

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for verb in ("prepare", "train", "predict", "ensemble", "report", "run"):
            assert verb in out
