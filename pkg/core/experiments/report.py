"""实验报告：误差表、拟合斜率、验收结论与来源信息"""
import json
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, Field, model_validator

from core import __version__
from core.errors import AcceptanceError


class ReportRow(BaseModel):
    N: int
    t: Optional[float] = None
    phi: str
    p: Optional[float] = None
    estimate: float
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    statistic: str

    @model_validator(mode="after")
    def check_interval(self):
        if self.ci_lo is not None and self.ci_hi is not None:
            if not self.ci_lo <= self.estimate <= self.ci_hi:
                raise ValueError(f"CI [{self.ci_lo}, {self.ci_hi}] does not contain {self.estimate}")
        return self


class FitResult(BaseModel):
    phi: str
    statistic: str
    slope: Optional[float] = None
    stderr: Optional[float] = None
    intercept: Optional[float] = None
    degenerate: bool = False


class AcceptanceResult(BaseModel):
    name: str
    passed: bool
    value: Optional[float] = None
    range: Optional[Tuple[float, float]] = None
    effect: Optional[float] = None
    enforced: bool = True
    detail: str = ""


class Provenance(BaseModel):
    seed: int
    config_hash: str = ""
    code_version: str = __version__
    timestamp: str = Field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))


class ExperimentReport(BaseModel):
    check: str
    model: str
    rows: List[ReportRow] = Field(default_factory=list)
    fits: List[FitResult] = Field(default_factory=list)
    acceptance: List[AcceptanceResult] = Field(default_factory=list)
    extras: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    provenance: Provenance

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.acceptance if a.enforced)

    def failures(self) -> List[AcceptanceResult]:
        return [a for a in self.acceptance if a.enforced and not a.passed]

    def raise_if_failed(self) -> None:
        failed = self.failures()
        if failed:
            summary = "; ".join(f"{a.name}={a.value} outside {a.range}" for a in failed)
            raise AcceptanceError(f"{self.check} acceptance failed: {summary}", failures=[a.model_dump() for a in failed])

    def to_frame(self) -> pd.DataFrame:
        columns = list(ReportRow.model_fields)
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=columns)

    def fits_frame(self) -> pd.DataFrame:
        return pd.DataFrame([fit.model_dump() for fit in self.fits], columns=list(FitResult.model_fields))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2, allow_nan=True)
