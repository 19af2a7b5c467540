import json

import numpy as np
import pandas as pd
import pytest

from core.utils.data_logger import ArtifactLogger
from core.utils.data_store import RunStore
from core.utils.plotting import plot_flow, plot_loglog


def test_artifact_logger_csv_header(tmp_path):
    """测试 CSV 带来源注释头且可以读回"""
    table = ArtifactLogger(["N", "estimate"], config_hash="abc", seed=4)
    table.log_row(N=10, estimate=0.1)
    table.log_row(N=20, estimate=1.0 / 3.0)
    path = table.save_to_file(tmp_path / "rows.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "# config_hash=abc seed=4"
    frame = ArtifactLogger.load_csv(path)
    assert frame["N"].tolist() == [10, 20]
    assert frame["estimate"].iloc[1] == 1.0 / 3.0


def test_artifact_logger_rejects_unknown_columns(tmp_path):
    """测试未声明的列与不支持的格式"""
    table = ArtifactLogger(["N"])
    with pytest.raises(ValueError):
        table.log_row(M=1)
    with pytest.raises(ValueError):
        table.save_to_file(tmp_path / "rows.xlsx")


def test_run_store_session(tmp_path):
    """测试运行目录、JSON 来源信息与 summary 的产物清单"""
    store = RunStore(tmp_path, config_hash="h", seed=1)
    with pytest.raises(RuntimeError):
        store.path("x.json")
    first = store.start_session("experiment:poc_rate")
    assert first.name.startswith("experiment-poc_rate_")
    store.write_json("eigen.json", {"lam": np.float64(0.5), "h": np.array([1.0, 2.0])})
    store.write_frame("flow.csv", pd.DataFrame({"time": [0.0, 1.0], "x_1": [1.0, 0.5]}))
    store.summary({"status": "ok"})
    payload = json.loads(store.path("eigen.json").read_text(encoding="utf-8"))
    assert payload == {"lam": 0.5, "h": [1.0, 2.0], "provenance": {"config_hash": "h", "seed": 1}}
    summary = json.loads(store.path("summary.json").read_text(encoding="utf-8"))
    assert summary["artifacts"] == ["eigen.json", "flow.csv"]
    second = store.start_session("experiment:poc_rate")
    assert second != first


def test_plots_are_written(tmp_path):
    """测试流轨迹图与对数收敛图"""
    flow = pd.DataFrame({"time": [0.0, 0.5, 1.0], "x_1": [1.0, 0.7, 0.6], "x_2": [0.0, 0.3, 0.4]})
    assert plot_flow(flow, tmp_path / "flow.png", "flow").exists()
    rows = pd.DataFrame(
        {
            "N": [10, 20, 40],
            "t": [1.0] * 3,
            "phi": ["x"] * 3,
            "p": [2.0] * 3,
            "estimate": [0.3, 0.21, 0.15],
            "ci_lo": [0.25, 0.18, 0.13],
            "ci_hi": [0.35, 0.24, 0.17],
            "statistic": ["sup-lp"] * 3,
        }
    )
    assert plot_loglog(rows, tmp_path / "lp.png", "sup-lp").exists()
    assert plot_loglog(rows, tmp_path / "none.png", "bias") is None
