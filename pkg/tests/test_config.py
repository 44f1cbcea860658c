import json
import logging
import os
from pathlib import Path

import pytest

from config_loader import RunConfig, get_config_value, load_config
from errors import ValidationError
from logger import attach_report_handler, detach_report_handler, setup_logging

REPO_CONFIG = Path(__file__).resolve().parent.parent / "config.json"


class TestLoadConfig:
    def test_shipped_config_matches_defaults(self):
        assert RunConfig.from_dict(load_config(str(REPO_CONFIG))) == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "absent.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ValidationError):
            load_config(str(path))

    def test_get_config_value(self, caplog):
        config = {"training": {"restarts": 7}}
        assert get_config_value(config, "training.restarts", 5) == 7
        with caplog.at_level(logging.WARNING):
            assert get_config_value(config, "training.seed", 3) == 3
        assert "training.seed" in caplog.text


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(attributes="x.csv", clusters=4, hidden_units=[6, 4], svm_enabled=True, svm_nu=0.1, out="o")
        cfg.save(tmp_path / "cfg.json")
        saved = json.loads((tmp_path / "cfg.json").read_text())
        assert saved["svm"] == {"enabled": True, "nu": 0.1, "sigma": None}
        assert saved["output"] == {"directory": "o"}
        assert RunConfig.from_dict(saved) == cfg

    def test_partial_sections_keep_defaults(self):
        cfg = RunConfig.from_dict({"model": {"clusters": 2, "hidden_units": 5}})
        assert cfg.clusters == 2
        assert cfg.hidden_units == [5]
        assert cfg.restarts == RunConfig().restarts

    def test_override_skips_none(self):
        cfg = RunConfig(seed=3).override(seed=None, restarts=2)
        assert cfg.seed == 3 and cfg.restarts == 2

    def test_override_unknown_field(self):
        with pytest.raises(ValidationError):
            RunConfig().override(epochs=3)

    @pytest.mark.parametrize("kwargs", [
        {"mode": "graph", "attributes": "a.csv"},
        {},
        {"mode": "relational", "dissimilarities": "d.csv"},
        {"attributes": "a.csv", "scheme": "triples"},
        {"attributes": "a.csv", "d0quantile": 0.0},
        {"attributes": "a.csv", "pair_mode": "sampled"},
        {"attributes": "a.csv", "pair_mode": "minibatch"},
        {"attributes": "a.csv", "nu": 2.0},
        {"attributes": "a.csv", "svm_nu": 1.0},
        {"attributes": "a.csv", "threads": 0},
        {"attributes": "a.csv", "hidden_units": [0]},
    ])
    def test_validate_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            RunConfig(**kwargs).validate()

    def test_threads_default_to_available_cores(self, monkeypatch):
        monkeypatch.setattr(os, "cpu_count", lambda: 6)
        assert RunConfig().optimizer_config().threads == 6
        assert RunConfig(threads=2).optimizer_config().threads == 2
        monkeypatch.setattr(os, "cpu_count", lambda: None)
        assert RunConfig().optimizer_config().threads == 1

    def test_auto_pair_mode(self):
        cfg = RunConfig()
        assert cfg.resolve_pair_mode(1000) == ("dense", None, None)
        assert cfg.resolve_pair_mode(1001) == ("minibatch", None, 10)
        assert cfg.resolve_pair_mode(2_000_000)[2] == 20_000
        assert RunConfig(batch_threshold=10).resolve_pair_mode(120) == ("minibatch", None, 2)

    def test_explicit_pair_modes(self):
        assert RunConfig(pair_mode="sampled", p=7).loss_config(50).p == 7
        cfg = RunConfig(pair_mode="minibatch", s=3, lam=0.5).loss_config(50)
        assert (cfg.mode, cfg.s, cfg.lam) == ("minibatch", 3, 0.5)

    def test_optimizer_config(self):
        opt = RunConfig(restarts=2, seed=9, early_stopping=True).optimizer_config()
        assert (opt.restarts, opt.seed, opt.early_stopping) == (2, 9, True)


class TestLogging:
    def test_report_handler_writes_json_lines(self, tmp_path):
        path = tmp_path / "report.jsonl"
        handler = attach_report_handler(str(path))
        report_log = logging.getLogger("training.report")
        try:
            report_log.debug("epoch 1", extra={"report": {"epoch": 1, "loss": 0.5}})
            report_log.debug("no payload")
        finally:
            detach_report_handler(handler)
        lines = path.read_text().splitlines()
        assert [json.loads(line) for line in lines] == [{"epoch": 1, "loss": 0.5}]
        assert handler not in report_log.handlers

    @pytest.mark.parametrize("verbose", [False, True])
    def test_setup_logging_routes_reports(self, verbose):
        setup_logging(verbose=verbose)
        assert logging.getLogger("training.report").propagate is verbose
        assert logging.getLogger().level == (logging.DEBUG if verbose else logging.INFO)

    def test_quiet(self):
        setup_logging(quiet=True)
        assert logging.getLogger().level == logging.ERROR
