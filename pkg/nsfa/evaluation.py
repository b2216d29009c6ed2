'''
Evaluation protocols: synthetic data from a connectivity matrix,
reconstruction error, support precision/recall, held-out predictive
likelihood and posterior summaries over K.
'''
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import linregress

from nsfa.entity import PosteriorSample, TraceRecord
from nsfa.model import LOG_2PI
from nsfa.schema import PredictiveAggregation


@dataclass(frozen=True)
class SyntheticSpec:
    Z_true: np.ndarray
    N: int
    snr: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.snr > 0:
            raise ValueError(f'snr must be positive, got {self.snr}')
        if np.any(np.asarray(self.Z_true).sum(axis=0) == 0):
            raise ValueError('connectivity matrix has a zero column')


@dataclass
class SyntheticData:
    Y: np.ndarray
    G: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    noise_variance: float


@dataclass(frozen=True)
class HeldOutSplit:
    '''`mask` is true where an entry stays visible to training.'''
    mask: np.ndarray
    fraction: float = 0.10
    seed: int = 0

    def test_mask(self, observed: np.ndarray) -> np.ndarray:
        return observed & ~self.mask


@dataclass
class KHistogram:
    counts: dict[int, int]
    mean: float
    sd: float

    def rows(self) -> list[tuple[int, int]]:
        return sorted(self.counts.items())


def random_connectivity(
    D: int,
    K: int,
    density: float,
    rng: np.random.Generator,
) -> np.ndarray:
    '''
    Bernoulli(density) stand-in for a regulatory connectivity matrix; a
    random row is switched on in any column left empty.
    '''
    Z = (rng.random((D, K)) < density).astype(np.int8)
    for k in np.flatnonzero(Z.sum(axis=0) == 0):
        Z[rng.integers(D), k] = 1
    return Z


def generate_synthetic(
    spec: SyntheticSpec,
    rng: Optional[np.random.Generator] = None,
) -> SyntheticData:
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    Z = np.asarray(spec.Z_true, dtype=np.int8)
    D, K = Z.shape
    G = np.zeros((D, K))
    G[Z == 1] = rng.standard_normal(int(Z.sum()))
    X = rng.standard_normal((K, spec.N))
    signal = G @ X

    variance = float(np.mean(signal ** 2)) / spec.snr
    noise = np.sqrt(variance) * rng.standard_normal(signal.shape)
    return SyntheticData(signal + noise, G, X, Z, variance)


def make_holdout(
    observed: np.ndarray,
    fraction: float = 0.10,
    seed: int = 0,
) -> HeldOutSplit:
    if not 0 <= fraction < 1:
        raise ValueError(f'holdout fraction {fraction} outside [0, 1)')
    observed = np.asarray(observed, dtype=bool)
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(observed)
    count = int(round(fraction * len(candidates)))

    mask = observed.copy()
    chosen = rng.choice(candidates, size=count, replace=False)
    mask.flat[chosen] = False
    return HeldOutSplit(mask, fraction, seed)


def column_distances(
    G_true: np.ndarray,
    G_hat: np.ndarray,
    sign_aware: bool = False,
) -> np.ndarray:
    '''K×K̂ squared column distances, optionally minimised over sign.'''
    difference = G_true[:, :, None] - G_hat[:, None, :]
    distances = (difference ** 2).sum(axis=0)
    if sign_aware:
        flipped = ((G_true[:, :, None] + G_hat[:, None, :]) ** 2).sum(axis=0)
        distances = np.minimum(distances, flipped)
    return distances


def reconstruction_error(
    G_true: np.ndarray,
    G_hat: np.ndarray,
    sign_aware: bool = False,
) -> float:
    G_true, G_hat = np.atleast_2d(G_true), np.atleast_2d(G_hat)
    if G_true.shape[0] != G_hat.shape[0]:
        raise ValueError(
            f'G_true has {G_true.shape[0]} rows, G_hat {G_hat.shape[0]}'
        )
    if G_hat.shape[1] == 0:
        G_hat = np.zeros((G_true.shape[0], 1))

    D, K = G_true.shape
    distances = column_distances(G_true, G_hat, sign_aware)
    return float(distances.min(axis=1).sum() / (D * K))


def mean_reconstruction_error(
    G_true: np.ndarray,
    samples: Sequence[PosteriorSample],
    sign_aware: bool = False,
) -> float:
    return float(np.mean([
        reconstruction_error(G_true, sample.G, sign_aware)
        for sample in samples
    ]))


def support_precision_recall(
    Z_true: np.ndarray,
    G_hat: np.ndarray,
    threshold: float = 0.0,
    sign_aware: bool = False,
    G_true: Optional[np.ndarray] = None,
) -> tuple[float, float]:
    '''
    Each true column is matched to its reconstruction-error minimising
    inferred column (against G_true when given, else against the 0/1
    support); the inferred support is |g| > threshold. Precision is 1 when
    nothing is predicted.
    '''
    if threshold < 0:
        raise ValueError(f'threshold must be non-negative, got {threshold}')
    Z_true = np.asarray(Z_true, dtype=bool)
    G_hat = np.atleast_2d(G_hat)
    if G_hat.shape[1] == 0:
        G_hat = np.zeros((Z_true.shape[0], 1))

    reference = Z_true.astype(np.float64) if G_true is None else G_true
    matched = column_distances(reference, G_hat, sign_aware).argmin(axis=1)
    support = np.abs(G_hat[:, matched]) > threshold

    true_positive = int(np.sum(support & Z_true))
    predicted = int(support.sum())
    actual = int(Z_true.sum())
    precision = true_positive / predicted if predicted else 1.0
    recall = true_positive / actual if actual else 1.0
    return precision, recall


def test_log_likelihood(
    Y_full: np.ndarray,
    test_mask: np.ndarray,
    samples: Sequence[PosteriorSample],
    aggregation: PredictiveAggregation = PredictiveAggregation.MEAN_DENSITY,
) -> float:
    '''
    Σ over held-out (d, n) of log (1/S)Σ_s N(y_dn; (G⁽ˢ⁾X⁽ˢ⁾)_dn, 1/ψ⁻¹_d⁽ˢ⁾),
    or the mean over samples of the log density with MEAN_LOG.
    '''
    if not len(samples):
        raise ValueError('no posterior samples')
    Y_full = np.asarray(Y_full, dtype=np.float64)
    rows, cols = np.nonzero(test_mask)
    y = Y_full[rows, cols]

    log_densities = np.empty((len(samples), len(rows)))
    for s, sample in enumerate(samples):
        mean = np.einsum('ik,ki->i', sample.G[rows], sample.X[:, cols])
        psi_inv = np.broadcast_to(sample.psi_inv, Y_full.shape[0])[rows]
        log_densities[s] = 0.5 * (
            np.log(psi_inv) - LOG_2PI - psi_inv * (y - mean) ** 2
        )

    if aggregation is PredictiveAggregation.MEAN_LOG:
        return float(log_densities.mean(axis=0).sum())
    predictive = logsumexp(log_densities, axis=0) - np.log(len(samples))
    return float(predictive.sum())


def posterior_k_histogram(
    traces: Iterable[TraceRecord | int],
    burn_in: int = 0,
) -> KHistogram:
    values = [
        trace if isinstance(trace, (int, np.integer)) else trace.k_active
        for trace in traces
    ]
    if len(values) <= burn_in:
        raise ValueError(f'trace of {len(values)} ≤ burn_in {burn_in}')
    kept = np.array(values[burn_in:], dtype=np.int64)
    return KHistogram(
        counts=dict(Counter(int(k) for k in kept)),
        mean=float(kept.mean()),
        sd=float(kept.std()),
    )


def iterations_to_stable_k(
    k_trace: Sequence[int],
    window: int = 100,
    tolerance: float = 1.0,
) -> int:
    '''
    First iteration (1-based) from which the running window mean of K stays
    within `tolerance` of the mean over the final window.
    '''
    k = np.asarray(k_trace, dtype=np.float64)
    if len(k) < window:
        raise ValueError(f'trace of {len(k)} shorter than window {window}')
    target = k[-window:].mean()
    running = np.convolve(k, np.ones(window) / window, mode='valid')
    outside = np.flatnonzero(np.abs(running - target) > tolerance)
    if not len(outside):
        return window
    return int(outside[-1]) + window + 1


def linear_scaling_fit(
    sizes: Sequence[float],
    seconds: Sequence[float],
) -> tuple[float, float, float]:
    fit = linregress(np.asarray(sizes, float), np.asarray(seconds, float))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
