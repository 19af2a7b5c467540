"""把配置里的 model 块变成 ModelSpec"""
import logging

import numpy as np

from config.run_config import ModelBlock, SelectionBlock
from core.errors import ConfigError
from core.model.expression import ExpressionError
from core.model.kernels import AdditiveKernel, GeneralKernel, SelectionKernel, general_from_matrix, matrix_field, vector_field
from core.model.spec import ModelSpec
from core.model.types import RateMatrix, StateSpace
from core.zoo.registry import build

logger = logging.getLogger(__name__)


def kernel_from_block(block: SelectionBlock, size: int) -> SelectionKernel:
    params = block.params
    symmetric = matrix_field(block.symmetric, size, params) if block.symmetric is not None else None
    if block.variant == "additive":
        return AdditiveKernel(
            vector_field(block.death, size, params),
            vector_field(block.birth, size, params),
            symmetric,
        )
    if block.matrix is not None:
        if np.shape(block.matrix) != (size, size):
            raise ConfigError(f"selection.matrix must be {size}x{size}, got shape {np.shape(block.matrix)}")
        return general_from_matrix(block.matrix)
    components = [(vector_field(d, size, params), vector_field(b, size, params)) for d, b in block.components]
    return GeneralKernel(components, symmetric, size=size)


def spec_from_block(block: ModelBlock) -> ModelSpec:
    """具名构造器交给 registry；内联模型按 mutation/selection 组装

    内联 mutation 的对角元全为 0 时按负行和补齐。
    """
    if block.builder is not None:
        spec = build(block.builder, block.params)
        return spec if block.name is None else spec.with_kernel(spec.kernel, name=block.name)

    entries = np.asarray(block.mutation, dtype=float)
    size = entries.shape[0]
    mutation = RateMatrix.from_off_diagonal(entries) if not np.any(np.diag(entries)) else RateMatrix(entries)
    labels = tuple(block.labels) if block.labels is not None else None
    try:
        kernel = kernel_from_block(block.selection, size)
    except ExpressionError as exc:
        raise ConfigError(f"model.selection: {exc}") from exc
    logger.debug(f"DEBUG - spec_from_block: inline model size={size} variant={block.selection.variant}")
    return ModelSpec(
        space=StateSpace(size, labels),
        mutation=mutation,
        kernel=kernel,
        name=block.label,
        provenance={"builder": "inline"},
    )
