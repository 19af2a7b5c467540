# config/settings.py
from typing import Dict, Optional

from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class ToleranceProfile(BaseModel):
    """数值容差集中配置"""

    exact: float = Field(1e-12, gt=0)            # 精确恒等式
    flow: float = Field(1e-8, gt=0)              # 两条流之间的 sup-TV
    eigen: float = Field(1e-10, gt=0)            # 特征残差
    propagator: float = Field(1e-7, gt=0)        # 非齐次传播子
    quadrature_rel: float = Field(1e-6, gt=0)    # Simpson 加密的相对变化
    integrand_cutoff: float = Field(1e-12, gt=0) # 反常积分截断
    mass_drift: float = Field(1e-10, gt=0)       # ODE 每步质量漂移
    negativity: float = Field(1e-9, gt=0)        # 允许的负值
    invariant: float = Field(1e-8, gt=0)         # 传播方程等一般恒等式


TOLERANCE_PROFILES: Dict[str, ToleranceProfile] = {
    "default": ToleranceProfile(),
    "strict": ToleranceProfile(
        flow=1e-10,
        eigen=1e-12,
        propagator=1e-9,
        quadrature_rel=1e-8,
        integrand_cutoff=1e-14,
        invariant=1e-10,
    ),
}


class Settings(BaseSettings):
    # 输出
    OUTPUT_DIR: str = "runs"
    LOG_LEVEL: str = "WARNING"
    # 并行
    WORKERS: int = 1
    # 数值安全上限
    EVENT_CAP: int = 50_000_000
    SIMPLEX_CAP: int = 5000
    NORM_SAMPLES: int = 32
    TOLERANCE_PROFILE: str = "default"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MORAN_",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()

_active: ToleranceProfile = TOLERANCE_PROFILES.get(settings.TOLERANCE_PROFILE, TOLERANCE_PROFILES["default"])


def get_tolerances() -> ToleranceProfile:
    """返回当前生效的容差"""
    return _active


def set_tolerances(profile: str = "default", overrides: Optional[Dict[str, float]] = None) -> ToleranceProfile:
    """切换容差配置，可附带逐项覆盖

    Args:
        profile: default 或 strict
        overrides: 字段名到数值的映射

    Returns:
        新的生效容差
    """
    global _active
    if profile not in TOLERANCE_PROFILES:
        raise ValueError(f"unknown tolerance profile '{profile}', expected one of {sorted(TOLERANCE_PROFILES)}")
    base = TOLERANCE_PROFILES[profile].model_dump()
    for key, value in (overrides or {}).items():
        if key not in base:
            raise ValueError(f"unknown tolerance '{key}'")
        base[key] = float(value)
    _active = ToleranceProfile(**base)
    return _active
