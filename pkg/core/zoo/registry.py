"""按名称构造示例模型，供配置文件与命令行使用"""
import logging
from typing import Any, Callable, Dict, Mapping

from pydantic import ValidationError

from core.errors import ConfigError, ModelValidationError
from core.model.spec import ModelSpec
from core.zoo.builders import (
    absorbed_chain,
    birth_death,
    centred_cloning,
    cloning,
    counterexample_bd,
    two_allelic,
)

logger = logging.getLogger(__name__)


def _birth_death(**params) -> ModelSpec:
    return birth_death(params)


BUILDERS: Dict[str, Callable[..., ModelSpec]] = {
    "two_allelic": two_allelic,
    "birth_death": _birth_death,
    "counterexample": counterexample_bd,
    "cloning": cloning,
    "centred_cloning": centred_cloning,
    "absorbed_chain": absorbed_chain,
}

# 可以按新的截断重建的构造器
TRUNCATED = {"birth_death", "counterexample"}


def build(name: str, params: Mapping[str, Any] = None) -> ModelSpec:
    if name not in BUILDERS:
        raise ConfigError(f"unknown builder '{name}' (available: {', '.join(sorted(BUILDERS))})")
    try:
        return BUILDERS[name](**dict(params or {}))
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"bad parameters for builder '{name}': {exc}") from exc


def rebuild(spec: ModelSpec, K: int) -> ModelSpec:
    """用同一组参数、新的截断 K 重建模型"""
    name = spec.provenance.get("builder")
    if name not in TRUNCATED:
        raise ModelValidationError(f"model '{spec.name}' was not built by a truncated builder")
    params = dict(spec.provenance.get("params", {}))
    params["K"] = int(K)
    logger.debug(f"DEBUG - rebuild: {name} K={K}")
    return build(name, params)
