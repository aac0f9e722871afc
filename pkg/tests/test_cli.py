"""
Tests for the command-line entry point.
"""

import pytest

from embodied_captioning import cli, pipeline
from embodied_captioning.exceptions import APIError, ContractError, PhaseError
from embodied_captioning.serialization import SCHEMAS, read_jsonl


def test_parse_args_overrides():
    args = cli.parse_args(["--set", "loss.lambda_tr=0.5", "--set", "exploration.policy=cla", "run"])
    assert args.overrides == [("loss.lambda_tr", 0.5), ("exploration.policy", "cla")]
    assert args.command == "run"


def test_parse_args_rejects_malformed_override(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.parse_args(["--set", "novalue", "run"])
    assert excinfo.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["--version"])
    assert excinfo.value.code == 0
    assert "embodied-captioning" in capsys.readouterr().out


def test_subcommand_flags_become_overrides():
    args = cli.parse_args(
        ["finetune", "--data", "p.jsonl", "--dataset", "d.jsonl", "--lambda", "0.5", "--epochs", "4", "--out-dir", "x"]
    )
    cfg = cli._config(args)
    assert cfg.loss.lambda_tr == 0.5
    assert cfg.loss.epochs == 4
    assert cfg.loss.patience == 3


def test_explore_command(tmp_path):
    """Test an empty episode end to end through the command line."""
    out = tmp_path / "explore"
    code = cli.main(
        ["--set", "scene.n_objects=3", "--set", "scene.rooms=[1, 1]", "explore", "--steps", "0", "--seed", "2",
         "--out-dir", str(out)]
    )
    assert code == 0
    header, records = read_jsonl(out / "episode.jsonl", SCHEMAS["episode"])
    assert records == []
    _, annotations = read_jsonl(out / "annotations.jsonl", SCHEMAS["annotations"])
    assert len(annotations) == 3


def test_missing_config_file_exits_with_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.yaml"), "run"]) == 2


def test_invalid_setting_exits_with_2(tmp_path):
    assert cli.main(["--set", "exploration.policy=walk", "explore", "--out-dir", str(tmp_path)]) == 2


def test_evaluate_model_needs_dataset(tmp_path):
    args = ["evaluate", "--pred", "p", "--ann", "a", "--model", "m", "--out", str(tmp_path / "r.json")]
    assert cli.main(args) == 2


def test_missing_input_file_exits_with_3(tmp_path):
    args = ["build-map", "--scene", str(tmp_path / "scene.json"), "--episode", "e", "--out-dir", str(tmp_path)]
    assert cli.main(args) == 3


def test_unreadable_manifest_exits_with_3(tmp_path):
    assert cli.main(["report", "--manifests", str(tmp_path / "manifest.json"), "--out-dir", str(tmp_path)]) == 3


def test_remote_failure_exits_with_4(monkeypatch, tmp_path):
    async def failing(*args, **kwargs):
        raise APIError("upstream unavailable", status_code=502)

    monkeypatch.setattr(pipeline, "consensus_phase", failing)
    args = ["consensus", "--map", "m.json", "--method", "ic3", "--out", str(tmp_path / "pseudo.jsonl")]
    assert cli.main(args) == 4


@pytest.mark.parametrize(
    "cause, expected",
    [(APIError("upstream unavailable"), 4), (ContractError("bad input"), 3)],
)
def test_run_phase_failure_exit_codes(monkeypatch, tmp_path, cause, expected):
    """Test that phase failures exit with 3 unless a remote service caused them."""

    def failing(cfg, seed=None, client=None):
        try:
            raise cause
        except Exception as e:
            raise PhaseError("Phase 'consensus' failed", phase="consensus") from e

    monkeypatch.setattr(pipeline, "run_pipeline", failing)
    assert cli.main(["run", "--out-dir", str(tmp_path)]) == expected


def test_run_uses_one_directory_per_seed(monkeypatch, tmp_path):
    seen = []
    monkeypatch.setattr(pipeline, "run_pipeline", lambda cfg, seed: seen.append((seed, cfg.output_dir)))
    assert cli.main(["--set", "seeds=[1, 2]", "run", "--out-dir", str(tmp_path)]) == 0
    assert seen == [(1, str(tmp_path / "seed-1")), (2, str(tmp_path / "seed-2"))]
