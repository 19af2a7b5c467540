"""副本扇出：每个副本拥有自己的随机流，聚合与 worker 数无关"""
import logging
import pickle
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from config.settings import settings
from core.engine.moran import MoranProcess
from core.engine.rng import stream
from core.model.spec import ModelSpec
from core.model.types import as_weights

logger = logging.getLogger(__name__)


def _run_chunk(
    spec: ModelSpec,
    N: int,
    weights: np.ndarray,
    horizon: float,
    times: np.ndarray,
    seed: int,
    run_id: int,
    replicate_ids: Sequence[int],
    event_cap: Optional[int],
) -> np.ndarray:
    process = MoranProcess(spec, N, event_cap=event_cap)
    out = np.empty((len(replicate_ids), times.size, spec.size))
    for k, r in enumerate(replicate_ids):
        rng = stream(seed, run_id, r)
        counts = rng.multinomial(N, weights)
        out[k] = process.run(counts, rng, horizon, times).weights
    return out


def _picklable(spec: ModelSpec) -> bool:
    try:
        pickle.dumps(spec)
    except Exception as exc:
        logger.warning(f"model '{spec.name}' cannot be sent to worker processes ({exc}); running serially")
        return False
    return True


def run_replicates(
    spec: ModelSpec,
    N: int,
    mu0,
    sample_times: Sequence[float],
    seed: int,
    run_id: int,
    replicates: int,
    workers: Optional[int] = None,
    horizon: Optional[float] = None,
    event_cap: Optional[int] = None,
) -> np.ndarray:
    """M 条独立轨迹在采样时刻的经验测度

    Returns:
        形如 (M, len(sample_times), K) 的数组，第 r 行总是来自 stream(seed, run_id, r)
    """
    times = np.asarray(sample_times, dtype=float)
    horizon = float(times[-1]) if horizon is None else float(horizon)
    weights = as_weights(mu0)
    weights = weights / weights.sum()
    workers = settings.WORKERS if workers is None else int(workers)
    ids = list(range(replicates))
    if workers <= 1 or replicates < 2 or not _picklable(spec):
        return _run_chunk(spec, N, weights, horizon, times, seed, run_id, ids, event_cap)

    chunks: List[List[int]] = [ids[k::workers] for k in range(workers) if ids[k::workers]]
    logger.debug(f"DEBUG - run_replicates: {spec.name} N={N} M={replicates} workers={len(chunks)}")
    out = np.empty((replicates, times.size, spec.size))
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [
            pool.submit(_run_chunk, spec, N, weights, horizon, times, seed, run_id, chunk, event_cap)
            for chunk in chunks
        ]
        for chunk, future in zip(chunks, futures):
            out[chunk] = future.result()
    return out
