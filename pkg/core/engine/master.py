"""𝓔_N 上的完整生成元，作为小规模实例的暴力预言机"""
import logging
import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import expm_multiply

from config.settings import settings
from core.errors import SimplexTooLargeError
from core.model.spec import ModelSpec
from core.model.types import RateMatrix

logger = logging.getLogger(__name__)


def simplex_size(size: int, N: int) -> int:
    """|𝓔_N| = C(N + K − 1, K − 1)"""
    return math.comb(N + size - 1, size - 1)


def _compositions(N: int, size: int) -> Iterator[Tuple[int, ...]]:
    if size == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _compositions(N - first, size - 1):
            yield (first,) + rest


def enumerate_simplex(size: int, N: int, cap: Optional[int] = None) -> np.ndarray:
    cap = settings.SIMPLEX_CAP if cap is None else cap
    count = simplex_size(size, N)
    if count > cap:
        raise SimplexTooLargeError(f"|E_N| = {count} exceeds the cap {cap} (size={size}, N={N})", states=count, cap=cap)
    return np.array(list(_compositions(N, size)), dtype=np.int64)


class MasterGenerator(RateMatrix):
    """𝓔_N 上的保守生成元，附带状态枚举"""

    def __init__(self, entries: np.ndarray, states: np.ndarray, N: int):
        super().__init__(entries)
        self.states = states
        self.N = N
        self.index: Dict[Tuple[int, ...], int] = {tuple(int(c) for c in s): i for i, s in enumerate(states)}

    def index_of(self, counts) -> int:
        return self.index[tuple(int(c) for c in counts)]

    def empirical(self) -> np.ndarray:
        """每个状态的 m(η)，形如 (|𝓔_N|, K)"""
        return self.states / self.N

    def law_at(self, t: float, eta0) -> np.ndarray:
        """δ_{η0} e^{t·master}"""
        start = np.zeros(self.size)
        start[self.index_of(eta0)] = 1.0
        if t == 0:
            return start
        law = expm_multiply(csr_matrix(self.entries.T) * t, start)
        law = np.clip(law, 0.0, None)
        return law / law.sum()

    def law_from(self, t: float, initial_law: np.ndarray) -> np.ndarray:
        law = expm_multiply(csr_matrix(self.entries.T) * t, np.asarray(initial_law, dtype=float))
        law = np.clip(law, 0.0, None)
        return law / law.sum()


def master_generator(spec: ModelSpec, N: int, cap: Optional[int] = None) -> MasterGenerator:
    """按定义逐项构造：(η, η−e_x+e_y) 处为 η(x)(Q_{x,y} + η(y)/N · V_{m(η)}(x,y))"""
    states = enumerate_simplex(spec.size, N, cap)
    index = {tuple(int(c) for c in s): i for i, s in enumerate(states)}
    q = spec.mutation.entries
    rates = np.zeros((len(states), len(states)))
    for i, eta in enumerate(states):
        v = spec.kernel.matrix(eta / N)
        for x in np.nonzero(eta)[0]:
            for y in range(spec.size):
                if x == y:
                    continue
                rate = eta[x] * (q[x, y] + eta[y] / N * v[x, y])
                if rate <= 0:
                    continue
                target = eta.copy()
                target[x] -= 1
                target[y] += 1
                rates[i, index[tuple(int(c) for c in target)]] += rate
    np.fill_diagonal(rates, -rates.sum(axis=1))
    logger.debug(f"DEBUG - master_generator: {spec.name} N={N} states={len(states)}")
    return MasterGenerator(rates, states, N)
