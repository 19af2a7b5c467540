"""确定性随机流

副本 r 使用 stream(seed, run_id, r)，结果与 worker 数和调度顺序无关。
"""
import zlib
from typing import Optional, Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]


def run_id_of(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, run_id: int = 0, replicate: int = 0) -> np.random.Generator:
    """计数器型 Philox 流，键为 (seed, run_id, replicate)"""
    sequence = np.random.SeedSequence([int(seed), int(run_id), int(replicate)])
    return np.random.Generator(np.random.Philox(sequence))


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(0 if seed is None else int(seed))
