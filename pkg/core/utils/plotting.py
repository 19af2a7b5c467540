"""收敛图与流轨迹图（无界面后端）"""
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def plot_loglog(frame: pd.DataFrame, target: Path, statistic: str, title: str = "", reference_slope: Optional[float] = -0.5) -> Optional[Path]:
    """按 phi 分组画 estimate 对 N 的对数图，带 CI 误差棒与参考斜率"""
    rows = frame[(frame["statistic"] == statistic) & (frame["estimate"] > 0)]
    if rows.empty:
        return None
    fig, ax = plt.subplots(figsize=(6.4, 3.8))
    for phi, group in rows.groupby("phi"):
        if "p" in group and group["p"].notna().any():
            group = group[group["p"] == group["p"].dropna().max()]
        group = group.sort_values("N")
        lower = (group["estimate"] - group["ci_lo"]).clip(lower=0).fillna(0)
        upper = (group["ci_hi"] - group["estimate"]).clip(lower=0).fillna(0)
        ax.errorbar(group["N"], group["estimate"], yerr=[lower, upper], marker="o", capsize=3, label=str(phi))
    if reference_slope is not None:
        ns = np.sort(rows["N"].unique()).astype(float)
        anchor = rows.loc[rows["N"] == ns[0], "estimate"].max()
        ax.plot(ns, anchor * (ns / ns[0]) ** reference_slope, "k--", lw=1, label=f"slope {reference_slope:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel(statistic)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(target, dpi=180)
    plt.close(fig)
    return target


def plot_flow(frame: pd.DataFrame, target: Path, title: str = "") -> Path:
    """frame 以 time 为首列，其余列为各状态的权重"""
    fig, ax = plt.subplots(figsize=(6.4, 3.8))
    states = [c for c in frame.columns if c != "time"]
    for column in states[:12]:
        ax.plot(frame["time"], frame[column], label=str(column))
    ax.set_xlabel("t")
    ax.set_ylabel("weight")
    ax.set_title(title)
    if len(states) <= 12:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(target, dpi=180)
    plt.close(fig)
    return target
