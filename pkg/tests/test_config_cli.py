import csv
import json

import pytest

from servoscope import nn_core
from servoscope.cli import run_command
from servoscope.config import ExperimentConfig, config_from_dict, config_to_dict, load_config
from servoscope.errors import ConfigError
from servoscope.experiment import (SuiteRow, demo_noise_seed, evaluate_suite, generate_demos,
                                   load_demos, save_demos, summarize, trial_scene)
from servoscope.sim_world import pixel_error
from servoscope.uvs_controller import ExecutionTrace

TINY = {
    "image": {"width": 64, "height": 64},
    "network": {"side": 16, "hidden": [8]},
    "trainer": {"epochs": 2, "learning_rate": 1e-3},
    "controller": {"max_steps": 4},
    "sphere": {"n_dirs": 8, "centers": [[70, 70, 10]]},
    "demos": 2,
    "trials": 2,
    "perturbations": [{"kind": "illumination_shift", "delta": 20}],
}


def write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_empty_document_gives_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig(controller=cfg.controller)
    assert cfg.sigma0 == pytest.approx(0.4)
    assert cfg.controller.success_threshold_px == pytest.approx(20 * 128 / 580)
    assert cfg.demos == 11 and cfg.trials == 10


def test_alpha_feeds_sigma_and_expert():
    cfg = config_from_dict({"trainer": {"alpha": 0.9}})
    assert cfg.sigma0 == pytest.approx(0.1)
    assert cfg.expert.alpha == 0.9


@pytest.mark.parametrize("raw", [{"trainer": {"alpha": 1.5}}, {"demos": 0},
                                 {"network": {"feedback": "odd"}}, {"perturbations": [{"kind": "x"}]},
                                 {"image": {"width": 8}}])
def test_invalid_values(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="trainer.alhpa"):
        config_from_dict({"trainer": {"alhpa": 0.5}})
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "demos": 3,\n  oops\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3:\d+"):
        load_config(p)


def test_threshold_scales_with_width():
    assert config_from_dict({"image": {"width": 64}}).controller.success_threshold_px == \
        pytest.approx(20 * 64 / 580)


def test_round_trip():
    cfg = config_from_dict(TINY)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


def test_seed_override():
    assert config_from_dict({}).with_seed(7).seed == 7


# -- experiment helpers -----------------------------------------------------------------

def test_demo_generation_is_seeded(tmp_path):
    cfg = config_from_dict(TINY)
    a, b = generate_demos(cfg), generate_demos(cfg)
    assert all(x == y for da, db in zip(a, b) for x, y in zip(da.frames, db.frames))
    assert demo_noise_seed(0, 0) != demo_noise_seed(0, 1)
    save_demos(a, tmp_path / "d", cfg.seed)
    back = load_demos(tmp_path / "d")
    assert len(back) == 2 and back[0].frames == a[0].frames
    assert back[1].ground_truth == a[1].ground_truth


def test_trial_starts_meet_the_pixel_margin():
    cfg = config_from_dict({})
    for i in range(5):
        s = trial_scene(cfg, i)
        assert pixel_error(s, cfg.camera()) >= cfg.scene.min_start_px


def test_summary_of_all_failures_is_blank(tmp_path):
    traces = [ExecutionTrace(30.0, reason="max_steps reached") for _ in range(3)]
    row = summarize("baseline", traces, 1.5)
    assert row.successes == 0 and row.mean_error_px is None and row.mean_steps is None
    from servoscope.experiment import SuiteResult

    SuiteResult([row]).write_csv(tmp_path / "s.csv")
    line = (tmp_path / "s.csv").read_text().splitlines()[1]
    assert line == "baseline,3,0,,,,1.500"


def test_suite_row_validation():
    with pytest.raises(ConfigError):
        SuiteRow("x", 2, 3, None, None, None, 0.0)


def test_demo_count_suite_has_one_row_per_count():
    cfg = config_from_dict({**TINY, "demo_counts": [1, 2], "trials": 1})
    result = evaluate_suite(cfg)
    assert [r.setting for r in result.rows] == ["demos=1", "demos=2"]
    assert all(r.trials == 1 for r in result.rows)


# -- command line ----------------------------------------------------------------------

def test_usage_errors_exit_one(tmp_path, capsys):
    assert run_command(["fly", "--config", "x", "--out", str(tmp_path)]) == 1
    assert run_command(["train", "--out", str(tmp_path)]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_one(tmp_path):
    p = write_cfg(tmp_path, {"trainer": {"alpha": 2}})
    assert run_command(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_missing_weights_exit_two(tmp_path, capsys):
    p = write_cfg(tmp_path, TINY)
    assert run_command(["execute", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "train" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path):
    assert run_command(["train", "--config", str(tmp_path / "nope.json"),
                        "--out", str(tmp_path / "o")]) == 1


def test_full_pipeline(tmp_path):
    p = write_cfg(tmp_path, TINY)
    out = tmp_path / "run"
    for cmd in ("gen-demos", "train", "execute", "evaluate", "sphere"):
        assert run_command([cmd, "--config", str(p), "--seed", "3", "--out", str(out)]) == 0, cmd
    assert json.loads((out / "resolved_config.json").read_text())["seed"] == 3
    assert len(list((out / "demos").glob("demo_*"))) == 2
    net = nn_core.load_network(out / "weights.tfn")
    assert net.input_dim == 256 and net.output_dim == 3
    curve = list(csv.reader(open(out / "learning_curve.csv")))
    assert len(curve) == 3 and curve[1][3] == ""
    assert (out / "trace_000.csv").exists()
    suite = list(csv.DictReader(open(out / "suite.csv")))
    assert [r["setting"] for r in suite] == ["baseline", "illumination_shift(+20)"]
    assert len(list((out / "traces" / "baseline").glob("trial_*.csv"))) == 2
    assert float(suite[0]["train_seconds"]) > 0
    field = list(csv.reader(open(out / "reward_field_0.csv")))
    assert len(field) == 9
    summary = list(csv.DictReader(open(out / "reward_field_summary.csv")))
    assert 0 <= float(summary[0]["angle_deg"]) <= 180


def test_train_is_reproducible(tmp_path):
    p = write_cfg(tmp_path, TINY)
    for run in ("a", "b"):
        assert run_command(["train", "--config", str(p), "--out", str(tmp_path / run)]) == 0
    for f in ("weights.tfn", "learning_curve.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    other = tmp_path / "c"
    assert run_command(["train", "--config", str(p), "--seed", "1", "--out", str(other)]) == 0
    assert (other / "weights.tfn").read_bytes() != (tmp_path / "a" / "weights.tfn").read_bytes()


def test_corrupt_demo_dir_exits_two(tmp_path):
    p = write_cfg(tmp_path, TINY)
    out = tmp_path / "o"
    (out / "demos" / "demo_000").mkdir(parents=True)
    (out / "demos" / "demo_000" / "manifest.json").write_text("{not json")
    assert run_command(["train", "--config", str(p), "--out", str(out)]) == 2
