'''
Indian Buffet Process: finite beta-Bernoulli prior, its infinite limit,
inclusion odds, generative draws and the conjugate update of the strength α.
Dimensions are the customers, features the dishes.
'''
from collections import Counter
from dataclasses import dataclass
from functools import cache

import numpy as np
from scipy.special import gammaln


@dataclass
class IbpDraw:
    Z: np.ndarray
    dish_counts: np.ndarray
    alpha: float

    @property
    def K_plus(self) -> int:
        return self.Z.shape[1]


@cache
def harmonic(D: int) -> float:
    return float(np.sum(1.0 / np.arange(1, D + 1)))


def check_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise ValueError(f'alpha must be positive, got {alpha}')


def log_prob_finite(Z: np.ndarray, alpha: float, K: int) -> float:
    '''Columns of Z past its last one up to K count as empty features.'''
    check_alpha(alpha)
    if K < 1:
        raise ValueError(f'K must be at least 1, got {K}')

    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] > K:
        raise ValueError(f'expected a D×k matrix with k ≤ {K}, got {Z.shape}')
    D = Z.shape[0]
    m = np.zeros(K)
    m[:Z.shape[1]] = Z.sum(axis=0)
    r = alpha / K
    return float(np.sum(
        np.log(r) + gammaln(m + r) + gammaln(D - m + 1) - gammaln(D + 1 + r)
    ))


def history_keys(Z: np.ndarray) -> list[bytes]:
    return [column.tobytes() for column in np.asarray(Z, dtype=np.int8).T]


def left_ordered_form(Z: np.ndarray) -> np.ndarray:
    '''
    Columns sorted by binary history, first row most significant, largest
    first. Zero columns sort last.
    '''
    Z = np.asarray(Z, dtype=np.int8)
    if Z.shape[1] == 0:
        return Z
    order = np.lexsort(Z[::-1])[::-1]
    return Z[:, order]


def log_prob_infinite(Z: np.ndarray, alpha: float) -> float:
    '''
    Probability of the left-ordered class of Z. The factorial denominator
    counts the D customers.
    '''
    check_alpha(alpha)
    Z = np.asarray(Z, dtype=np.int8)
    D, K_plus = Z.shape
    m = Z.sum(axis=0)
    if np.any(m == 0):
        raise ValueError('zero columns are not allowed in an IBP matrix')

    K_h = np.array(
        list(Counter(history_keys(left_ordered_form(Z))).values()),
        dtype=np.float64,
    )

    return float(
        K_plus * np.log(alpha)
        - np.sum(gammaln(K_h + 1))
        - alpha * harmonic(D)
        + np.sum(gammaln(D - m + 1) + gammaln(m) - gammaln(D + 1))
    )


def conditional_inclusion_log_odds(m_minus: int, D: int) -> float:
    '''
    log P(z=1)/P(z=0) for an element whose feature is held by `m_minus`
    other dimensions.
    '''
    if not 0 <= m_minus <= D - 1:
        raise ValueError(f'm_minus={m_minus} outside [0, {D - 1}]')
    if m_minus == 0:
        return -np.inf
    return float(np.log(m_minus) - np.log(D - m_minus))


def sample_ibp(D: int, alpha: float, rng: np.random.Generator) -> IbpDraw:
    check_alpha(alpha)
    columns: list[np.ndarray] = []
    counts = np.zeros(0, dtype=np.int64)

    for i in range(1, D + 1):
        taken = rng.random(len(counts)) < counts / i
        for k in np.flatnonzero(taken):
            columns[k][i - 1] = 1
        counts = counts + taken

        new = rng.poisson(alpha / i)
        for _ in range(new):
            column = np.zeros(D, dtype=np.int8)
            column[i - 1] = 1
            columns.append(column)
        counts = np.concatenate([counts, np.ones(new, dtype=np.int64)])

    Z = np.column_stack(columns) if columns else np.zeros((D, 0), np.int8)
    return IbpDraw(Z.astype(np.int8), counts, alpha)


def sample_finite(
    D: int,
    K: int,
    alpha: float,
    rng: np.random.Generator,
) -> np.ndarray:
    check_alpha(alpha)
    pi = rng.beta(alpha / K, 1.0, size=K)
    return (rng.random((D, K)) < pi).astype(np.int8)


def sample_alpha(
    K_plus: int,
    D: int,
    e: float,
    f: float,
    rng: np.random.Generator,
) -> float:
    return float(rng.gamma(K_plus + e, 1.0 / (f + harmonic(D))))
