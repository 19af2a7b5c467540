"""命令行任务：每个任务读取运行配置、调用核心模块并把结果写进 RunStore"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config.run_config import RunConfig
from config.settings import settings
from core.engine.moran import simulate
from core.engine.replicates import run_replicates
from core.engine.rng import run_id_of, stream
from core.errors import ConfigError
from core.experiments.checks import run_experiment
from core.experiments.plan import resolve_phi
from core.experiments.report import ExperimentReport
from core.model.spec import ModelSpec, initial_measure, model_to_dict
from core.model.validation import validate_model
from core.solvers.eigen import doob_transform, eigen_triplet
from core.solvers.ergodicity import flow_ergodicity, unnormalised_ergodicity
from core.solvers.feynman_kac import normalized_flow
from core.solvers.mean_field import mean_field_ode
from core.utils.data_store import RunStore
from core.utils.plotting import plot_flow, plot_loglog
from core.variance.toolkit import sigma2_inf, sigma2_inf_fleming_viot, sigma2_T, variance_compare
from core.zoo.builders import BDParams, counterexample_residuals, counterexample_row1_closed_form
from core.zoo.checks import (
    bd_qsd_uniqueness_check,
    rate_criterion_check,
    spectral_criterion_check,
    truncation_stability,
)

logger = logging.getLogger(__name__)


@dataclass
class TaskContext:
    config: RunConfig
    spec: ModelSpec
    store: RunStore
    workers: Optional[int] = None
    plots: bool = False
    report: Optional[ExperimentReport] = None

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()


class RunTask:
    name: str = ""
    description: str = ""

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        raise NotImplementedError

    def admissible(self, ctx: TaskContext) -> Dict[str, Any]:
        """写出校验报告；不可容许的模型在任何计算之前终止运行"""
        report = validate_model(ctx.spec, settings.NORM_SAMPLES)
        ctx.store.write_json("validation.json", report)
        report.raise_if_invalid()
        return {"admissible": report.admissible, "variant": report.variant, "norm_V": report.norm_V}


class ValidateTask(RunTask):
    name = "validate"
    description = "检查生成元、选择核与有界性，输出 validation.json"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        ctx.store.write_json("model.json", model_to_dict(ctx.spec))
        return self.admissible(ctx)


class SimulateTask(RunTask):
    name = "simulate"
    description = "Moran 粒子系统轨迹；多副本时输出均值轨迹与末时刻分布"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        summary = self.admissible(ctx)
        block = ctx.config.simulate
        times = np.linspace(0.0, block.horizon, block.sample_points)
        run_id = run_id_of(f"simulate:N={block.N}")
        mu0 = initial_measure(ctx.spec, block.mu0)
        if block.replicates == 1:
            record = simulate(
                ctx.spec,
                block.N,
                mu0,
                block.horizon,
                times,
                stream(ctx.config.seed, run_id, 0),
                record_events=block.record_events,
                event_cap=settings.EVENT_CAP,
            )
            frame = record.to_frame()
            ctx.store.write_frame("trajectory.csv", frame)
            if block.record_events:
                ctx.store.write_frame("events.csv", record.events_frame())
            summary.update(events=record.event_count, final=record.weights[-1].tolist())
        else:
            samples = run_replicates(
                ctx.spec,
                block.N,
                mu0,
                times,
                ctx.config.seed,
                run_id,
                block.replicates,
                workers=ctx.workers,
                horizon=block.horizon,
                event_cap=settings.EVENT_CAP,
            )
            columns = [f"x_{i + 1}" for i in range(ctx.spec.size)]
            frame = pd.DataFrame(samples.mean(axis=0), columns=columns)
            frame.insert(0, "time", times)
            ctx.store.write_frame("trajectory_mean.csv", frame)
            final = pd.DataFrame(samples[:, -1, :], columns=columns)
            final.insert(0, "replicate", np.arange(block.replicates))
            ctx.store.write_frame("final_measures.csv", final)
            summary.update(replicates=block.replicates, final_mean=samples[:, -1, :].mean(axis=0).tolist())
        if ctx.plots:
            ctx.store.register(plot_flow(frame, ctx.store.path("trajectory.png"), f"{ctx.spec.name} N={block.N}"))
        summary.update(N=block.N, horizon=block.horizon)
        return summary


class FlowTask(RunTask):
    name = "flow"
    description = "非线性流 μ_t：Feynman–Kac 半群和/或平均场 ODE"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        summary = self.admissible(ctx)
        block = ctx.config.flow
        times = np.asarray(block.times if block.times is not None else np.linspace(0.0, block.horizon, block.points))
        mu0 = initial_measure(ctx.spec, block.mu0)
        flows = {}
        if block.method in ("semigroup", "both") and (block.method == "semigroup" or ctx.spec.is_additive):
            flows["semigroup"] = normalized_flow(ctx.spec, mu0, times)
        if block.method in ("ode", "both"):
            flows["ode"] = mean_field_ode(ctx.spec, mu0, times, step=block.step)
        for method, flow in flows.items():
            frame = flow.to_frame()
            ctx.store.write_frame(f"flow_{method}.csv", frame)
            if ctx.plots:
                ctx.store.register(plot_flow(frame, ctx.store.path(f"flow_{method}.png"), f"{ctx.spec.name} ({method})"))
            summary[f"{method}_final"] = flow.weights[-1].tolist()
            summary[f"{method}_diagnostics"] = dict(flow.diagnostics)
        if len(flows) == 2:
            summary["sup_tv_semigroup_vs_ode"] = flows["semigroup"].sup_tv(flows["ode"])
        return summary


class EigenTask(RunTask):
    name = "eigen"
    description = "主特征三元组 (μ∞, h, λ)、Doob 变换与指数遍历性"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        summary = self.admissible(ctx)
        triplet = eigen_triplet(ctx.spec)
        ctx.store.write_json("eigen.json", triplet.to_dict())
        labels = list(ctx.spec.space.display_labels)
        doob = pd.DataFrame(np.asarray(doob_transform(ctx.spec, triplet)), columns=labels)
        doob.insert(0, "state", labels)
        ctx.store.write_frame("doob_generator.csv", doob)
        normalised = flow_ergodicity(ctx.spec, seed=ctx.config.seed, triplet=triplet)
        unnormalised = unnormalised_ergodicity(ctx.spec, seed=ctx.config.seed, triplet=triplet)
        ctx.store.write_json("ergodicity.json", {"normalised": normalised, "unnormalised": unnormalised})
        summary.update(
            lam=triplet.lam,
            spectral_gap=triplet.gap,
            residual_left=triplet.residual_left,
            residual_right=triplet.residual_right,
            flow_rate=normalised.rate,
            flow_confirmed=normalised.confirmed,
        )
        return summary


class VarianceTask(RunTask):
    name = "variance"
    description = "渐近方差 σ²_T 或 σ²_∞，可选与 Σ_μ 约化模型比较"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        summary = self.admissible(ctx)
        block = ctx.config.variance
        triplet = eigen_triplet(ctx.spec) if block.T is None else None
        mu0 = initial_measure(ctx.spec, block.mu0)
        rows: List[Dict[str, Any]] = []
        details: Dict[str, Any] = {}
        for label, source in block.phi.items():
            phi = resolve_phi(source, ctx.spec)
            report = sigma2_inf(ctx.spec, phi, triplet) if block.T is None else sigma2_T(ctx.spec, mu0, block.T, phi)
            entry: Dict[str, Any] = {"report": report.to_dict()}
            row = {"phi": label, "sigma2": report.sigma2, **report.decomposition, "quadrature_error": report.quadrature_error_estimate}
            if block.fleming_viot and block.T is None:
                closed = sigma2_inf_fleming_viot(ctx.spec, phi, triplet)
                entry["fleming_viot_closed_form"] = closed
                row["fleming_viot_closed_form"] = closed
            if block.compare:
                comparison = variance_compare(ctx.spec, phi, T=block.T, mu0=mu0)
                entry["comparison"] = comparison.model_dump(mode="json")
                row["sigma2_reduced"] = comparison.reduced.sigma2
                row["reduction"] = comparison.reduction
            details[label] = entry
            rows.append(row)
        ctx.store.write_json("variance.json", details)
        frame = pd.DataFrame(rows)
        ctx.store.write_frame("variance.csv", frame)
        summary["sigma2"] = {row["phi"]: row["sigma2"] for row in rows}
        summary["horizon"] = "inf" if block.T is None else block.T
        return summary


class ExperimentTask(RunTask):
    name = "experiment"
    description = "蒙特卡洛收敛实验：误差表、拟合斜率与验收结论"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        summary = self.admissible(ctx)
        plan = ctx.config.experiment_plan()
        if ctx.workers is not None:
            plan = plan.model_copy(update={"workers": ctx.workers})
        report = run_experiment(plan, ctx.spec, ctx.config_hash)
        self.write_report(ctx, report)
        summary.update(
            check=report.check,
            passed=report.passed,
            fits={f"{f.phi}/{f.statistic}": f.slope for f in report.fits},
            acceptance=[a.model_dump(mode="json") for a in report.acceptance],
            notes=report.notes,
        )
        ctx.report = report
        return summary

    @staticmethod
    def write_report(ctx: TaskContext, report: ExperimentReport):
        target = ctx.store.path("report.json")
        target.write_text(report.to_json(), encoding="utf-8")
        ctx.store.register(target)
        rows = report.to_frame()
        ctx.store.write_frame("rows.csv", rows)
        if report.fits:
            ctx.store.write_frame("fits.csv", report.fits_frame())
        if ctx.plots and not rows.empty:
            for statistic in rows["statistic"].unique():
                if statistic in ("sup-lp", "w-dist", "lp", "rmse", "bias"):
                    slope = -1.0 if statistic == "bias" else -0.5
                    path = plot_loglog(rows, ctx.store.path(f"{statistic}.png"), statistic, report.check, slope)
                    if path is not None:
                        ctx.store.register(path)


class ZooCheckTask(RunTask):
    name = "zoo-check"
    description = "示例模型的解析判据：QSD 级数、速率判据、谱判据、反例恒等式、截断稳定性"

    def run(self, ctx: TaskContext) -> Dict[str, Any]:
        check = ctx.config.task_name
        block = ctx.config.zoo_check
        spec = ctx.spec
        if check == "qsd_series":
            params = block.series
            if params is None:
                if spec.provenance.get("builder") != "birth_death":
                    raise ConfigError("zoo-check:qsd_series needs zoo_check.series or a birth_death model")
                params = spec.provenance["params"]
            try:
                series = BDParams(**{"K": block.K_terms, **params})
            except ValidationError as exc:
                raise ConfigError(f"zoo_check.series: {exc}") from exc
            result = bd_qsd_uniqueness_check(series, block.K_terms)
            terms = pd.DataFrame(
                {
                    "k": np.arange(2, 2 + len(result.terms)),
                    "term": result.terms,
                    "partial_sum": result.partial_sums,
                    "log_partial_sum": result.log_partial_sums,
                }
            )
            ctx.store.write_frame("series.csv", terms)
            payload = result.model_dump(mode="json", exclude={"terms", "partial_sums", "log_partial_sums"})
        elif check == "rate_criterion":
            payload = rate_criterion_check(spec, block.subset).model_dump(mode="json")
        elif check == "spectral_criterion":
            payload = spectral_criterion_check(spec, block.epsilon).model_dump(mode="json")
        elif check == "truncation":
            payload = truncation_stability(spec, block.factor).model_dump(mode="json")
        else:
            payload = self.counterexample(spec)
        ctx.store.write_json(f"{check}.json", payload)
        return {"check": check, **payload}

    @staticmethod
    def counterexample(spec: ModelSpec) -> Dict[str, Any]:
        if spec.provenance.get("builder") != "counterexample":
            raise ConfigError("zoo-check:counterexample needs model.builder: counterexample")
        params = spec.provenance["params"]
        residuals = counterexample_residuals(spec)
        expected = counterexample_row1_closed_form(params["b"], params["b1"], params["b1_mode"])
        triplet = eigen_triplet(spec)
        analytic_lam = float(spec.provenance["analytic"]["lambda"])
        return {
            "b1_mode": params["b1_mode"],
            "row1_residual": float(residuals[0]),
            "row1_closed_form": expected,
            "interior_residual_max": float(np.abs(residuals[1:-1]).max()),
            "boundary_residual": float(residuals[-1]),
            "lambda_analytic": analytic_lam,
            "lambda_numeric": triplet.lam,
            "lambda_gap": triplet.lam - analytic_lam,
        }


def get_tasks() -> Dict[str, RunTask]:
    """按任务种类（冒号前的部分）索引的任务实例"""
    tasks = [ValidateTask(), SimulateTask(), FlowTask(), EigenTask(), VarianceTask(), ExperimentTask(), ZooCheckTask()]
    return {task.name: task for task in tasks}
