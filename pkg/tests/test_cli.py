import json
from pathlib import Path

import pytest

from cli.main import main
from config.settings import set_tolerances

TWO_ALLELIC = """\
model:
  builder: two_allelic
  params: {a: 1.0, b: 2.0, p: 0.5, q: 1.5}
"""


@pytest.fixture(autouse=True)
def default_tolerances():
    yield
    set_tolerances("default")


def run_cli(tmp_path: Path, text: str, *extra: str):
    tmp_path.mkdir(parents=True, exist_ok=True)
    config = tmp_path / "run.yaml"
    config.write_text(text, encoding="utf-8")
    out = tmp_path / "out"
    code = main(["--config", str(config), "--out", str(out), *extra])
    summaries = sorted(out.glob("*/summary.json"))
    summary = json.loads(summaries[-1].read_text(encoding="utf-8")) if summaries else None
    return code, summary


def test_validate_writes_summary(tmp_path):
    """测试 validate 任务写出 summary.json 与模型描述"""
    code, summary = run_cli(tmp_path, "task: validate\nseed: 3\n" + TWO_ALLELIC)
    assert code == 0
    assert summary["status"] == "ok"
    assert summary["admissible"] is True
    assert summary["seed"] == 3
    assert {"model.json", "validation.json"} <= set(summary["artifacts"])
    assert summary["provenance"]["config_hash"] == summary["config_hash"]


def test_missing_task_exits_with_config_error(tmp_path, capsys):
    """测试配置错误的退出码为 1"""
    code, summary = run_cli(tmp_path, TWO_ALLELIC)
    assert code == 1
    assert summary is None
    assert "missing key 'task'" in capsys.readouterr().err


def test_inadmissible_model_exits_with_validation_error(tmp_path):
    """测试不可容许的模型退出码为 2，summary 记录失败"""
    text = "task: flow\nmodel:\n  mutation: [[-1.0, 1.0], [-0.5, 0.5]]\n"
    code, summary = run_cli(tmp_path, text)
    assert code == 2
    if summary is not None:
        assert summary["status"] == "failed"
        assert summary["error"]["exit_code"] == 2


def test_simulate_writes_trajectory_with_provenance_header(tmp_path):
    """测试单副本模拟写出带来源注释的轨迹表"""
    text = "task: simulate\nseed: 5\n" + TWO_ALLELIC + "simulate:\n  N: 10\n  horizon: 1.0\n  sample_points: 6\n"
    code, summary = run_cli(tmp_path, text)
    assert code == 0
    assert summary["N"] == 10
    trajectory = next((tmp_path / "out").glob("*/trajectory.csv"))
    header = trajectory.read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("# config_hash=")
    assert "seed=5" in header


def test_simulate_is_reproducible(tmp_path):
    """测试相同配置两次运行得到相同的末态"""
    text = "task: simulate\nseed: 9\n" + TWO_ALLELIC + "simulate:\n  N: 20\n  horizon: 0.5\n"
    _, first = run_cli(tmp_path / "a", text)
    _, second = run_cli(tmp_path / "b", text)
    assert first["final"] == second["final"]
    assert first["config_hash"] == second["config_hash"]


def test_flow_methods_agree(tmp_path):
    """测试 flow 任务里半群与 ODE 一致"""
    code, summary = run_cli(tmp_path, "task: flow\n" + TWO_ALLELIC + "flow:\n  horizon: 1.0\n  points: 5\n")
    assert code == 0
    assert summary["sup_tv_semigroup_vs_ode"] < 1e-8


def test_counterexample_zoo_check(tmp_path):
    """测试反例检查输出第一行残差与数值 λ"""
    text = "task: zoo-check:counterexample\nmodel:\n  builder: counterexample\n  params: {b: 0.5, d: 1.0, K: 12}\n"
    code, summary = run_cli(tmp_path, text)
    assert code == 0
    assert summary["row1_residual"] == pytest.approx(summary["row1_closed_form"])
    assert summary["interior_residual_max"] < 1e-12


def test_failed_acceptance_exits_with_three(tmp_path):
    """测试验收失败的退出码为 3，报告仍然写出"""
    text = (
        "task: experiment:poc_rate\n"
        + TWO_ALLELIC
        + "experiment:\n  n_grid: [4, 8]\n  replicates: 10\n  horizon: 0.5\n  sample_points: 3\n"
        + "  bootstrap_resamples: 10\n  acceptance:\n    slope_range: [5.0, 6.0]\n"
    )
    code, summary = run_cli(tmp_path, text)
    assert code == 3
    assert summary["status"] == "failed"
    assert "report.json" in summary["artifacts"]
