import json

import numpy as np
import pytest

from odpr.cli import main
from odpr.dataset import load_dataset
from odpr.priority import load_weights

SMALL_BANDIT = """
dataset.generator = bandit
dataset.per_mode = 50
priority.kind = advantage
priority.iterations = 3
priority.sigma = none
fit.steps = 30
fit.hidden_sizes = 4
train.algos = td3bc, bc
train.wirings = vanilla, DR
train.steps = 60
train.batch_size = 32
train.hidden_sizes = 8
train.alpha = 20
train.log_every = 20
seeds = 0-1
"""


@pytest.fixture
def bandit_cfg(tmp_path):
    p = tmp_path / "bandit.cfg"
    p.write_text(SMALL_BANDIT)
    return p


def test_compute_priorities_outputs(tmp_path, bandit_cfg, capsys):
    out = tmp_path / "pri"
    assert main(["compute-priorities", "--config", str(bandit_cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    rewards = [it["mean_reward"] for it in report["iterations"]]
    assert len(rewards) == 4 and np.all(np.diff(rewards) > 0)
    assert {"weight_std", "effective_sample_size"} <= set(report["iterations"][1])
    d = load_dataset(out / "dataset.odprds")
    assert len(load_weights(out / "weights.odprwt", d)) == 200
    assert sorted(p.name for p in out.glob("value_iter*.odprvf")) == [f"value_iter{k}.odprvf" for k in (1, 2, 3)]


def test_return_kind_on_concat_flags_degenerate(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dataset.generator = concat\npriority.kind = return\n")
    assert main(["compute-priorities", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "degenerate: equal returns" in report["flags"]
    w = load_weights(tmp_path / "o" / "weights.odprwt")
    assert np.array_equal(w.w, np.full(4, 0.25))


def test_abs_td_without_fit_section(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dataset.generator = bandit\npriority.kind = abs_td\n")
    assert main(["compute-priorities", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "abs_td requires value fitting" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("fit.steps = 5\nwhat = 1\n")
    assert main(["run-bandit", "--config", str(cfg)]) != 0
    assert "line 2" in capsys.readouterr().err


def test_run_bandit_deterministic_and_exports(tmp_path, bandit_cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run-bandit", "--config", str(bandit_cfg), "--out", str(out)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert set(summary["variants"]) == {"td3bc/vanilla", "td3bc/DR", "bc/vanilla", "bc/DR"}
    assert len(summary["k_sweep"]) == 4
    assert "mean" in summary["variants"]["td3bc/DR"]["distance_to_optimal"]

    assert main(["export-figures", str(a)]) == 0
    assert main(["export-figures", str(a), "--out", str(tmp_path / "fig2")]) == 0
    names = sorted(p.name for p in (a / "figures").iterdir())
    assert names == ["policy_trajectories.csv"] + [f"scatter_iter{k}.csv" for k in range(4)]
    for name in names:
        assert (a / "figures" / name).read_bytes() == (tmp_path / "fig2" / name).read_bytes()


def test_single_seed_rerun_identical(tmp_path, bandit_cfg, capsys):
    for out in ("x", "y"):
        main(["run-bandit", "--config", str(bandit_cfg), "--seed", "1", "--out", str(tmp_path / out)])
    assert (tmp_path / "x" / "metrics.csv").read_bytes() == (tmp_path / "y" / "metrics.csv").read_bytes()


def test_weights_reused_across_commands(tmp_path, bandit_cfg, capsys):
    pri = tmp_path / "pri"
    assert main(["compute-priorities", "--config", str(bandit_cfg), "--seed", "0", "--out", str(pri)]) == 0
    reuse = tmp_path / "reuse.cfg"
    reuse.write_text(SMALL_BANDIT.replace("seeds = 0-1", "seeds = 0")
                     + f"priority.weights = {pri / 'weights.odprwt'}\n")
    assert main(["run-bandit", "--config", str(reuse), "--out", str(tmp_path / "run")]) == 0
    # a different seed generates different data, so the pairing check must refuse
    assert main(["run-bandit", "--config", str(reuse), "--seed", "5", "--out", str(tmp_path / "bad")]) != 0
    assert "hash" in capsys.readouterr().err


def test_export_figures_empty_dir(tmp_path, capsys):
    assert main(["export-figures", str(tmp_path)]) != 0


def test_property_suite_pass_and_report(tmp_path, capsys):
    assert main(["property-suite", "--suite", "theorem1", "--trials", "20", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "theorem1.json").read_text())
    assert report["passed"] and len(report["trials"]) == 20
    assert all("margin" in t for t in report["trials"])


def test_property_suite_unknown(capsys):
    with pytest.raises(SystemExit) as err:
        main(["property-suite", "--suite", "nonsense"])
    assert err.value.code != 0


def test_run_tabular(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("tabular.mdp = concat\ntabular.iterations = 2\ntabular.epsilon = 0.05\n")
    assert main(["run-tabular", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rec = json.loads((tmp_path / "o" / "tabular.json").read_text())["records"][0]
    assert rec["J_prioritized"] == pytest.approx([1.0, 2.0, 2.0])
    assert rec["J_search_from_prioritized"] >= rec["J_search_from_behavior"]
