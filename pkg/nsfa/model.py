from dataclasses import dataclass

import numpy as np

from nsfa.entity import FeatureState, ObservationMatrix
from nsfa.errors import InvalidStateError

LOG_2PI = float(np.log(2 * np.pi))


def check_shapes(data: ObservationMatrix, state: FeatureState) -> None:
    if state.G.shape[0] != data.D or state.X.shape[1] != data.N:
        raise InvalidStateError(
            f'state {state.G.shape}·{state.X.shape} does not fit data '
            f'{data.values.shape}'
        )
    if state.G.shape[1] != state.X.shape[0]:
        raise InvalidStateError(
            f'G has {state.G.shape[1]} columns, X has {state.X.shape[0]} rows'
        )


@dataclass
class ResidualCache:
    '''E_hat = Y − G·X, kept current by incremental rank-1 updates.'''
    E_hat: np.ndarray

    def drift(self, data: ObservationMatrix, state: FeatureState) -> float:
        fresh = recompute_residual(data, state).E_hat
        if fresh.size == 0:
            return 0.0
        return float(np.max(np.abs(fresh - self.E_hat)))

    def audit(
        self,
        data: ObservationMatrix,
        state: FeatureState,
        tolerance: float,
    ) -> None:
        drift = self.drift(data, state)
        if not drift < tolerance:
            raise InvalidStateError(
                f'residual drift {drift:.3e} exceeds {tolerance:.1e}'
            )

    def refresh(self, data: ObservationMatrix, state: FeatureState) -> None:
        self.E_hat = recompute_residual(data, state).E_hat


def recompute_residual(
    data: ObservationMatrix,
    state: FeatureState,
) -> ResidualCache:
    check_shapes(data, state)
    return ResidualCache(data.values - state.G @ state.X)


def log_likelihood(
    data: ObservationMatrix,
    state: FeatureState,
    psi_inv: np.ndarray,
) -> float:
    '''
    Σ over observed (d, n) of log N(y_dn; (GX)_dn, 1/ψ⁻¹_d).
    '''
    check_shapes(data, state)
    psi_inv = np.broadcast_to(np.asarray(psi_inv, dtype=np.float64), data.D)
    if not np.isfinite(psi_inv).all() or np.any(psi_inv <= 0):
        raise InvalidStateError('noise precisions must be finite and positive')
    if not (np.isfinite(state.G).all() and np.isfinite(state.X).all()):
        raise InvalidStateError('non-finite loadings or factors')

    residual = data.values - state.G @ state.X
    return log_likelihood_from_residual(residual, data.mask, psi_inv)


def log_likelihood_from_residual(
    residual: np.ndarray,
    mask: np.ndarray,
    psi_inv: np.ndarray,
) -> float:
    observed = mask.sum(axis=1)
    squares = np.where(mask, residual, 0.0) ** 2
    terms = (
        0.5 * observed * (np.log(psi_inv) - LOG_2PI)
        - 0.5 * psi_inv * squares.sum(axis=1)
    )
    value = float(terms.sum())
    if not np.isfinite(value):
        raise InvalidStateError('log likelihood is not finite')
    return value


def impute_missing(
    data: ObservationMatrix,
    state: FeatureState,
    psi_inv: np.ndarray,
    rng: np.random.Generator,
    cache: ResidualCache | None = None,
) -> np.ndarray:
    '''
    Redraws every unobserved y_dn from N((GX)_dn, 1/ψ⁻¹_d) in row-major
    order, one standard normal per entry, and keeps the residual cache
    consistent.
    '''
    check_shapes(data, state)
    rows, cols = np.nonzero(data.missing)
    if not len(rows):
        return data.values

    psi_inv = np.broadcast_to(np.asarray(psi_inv, dtype=np.float64), data.D)
    mean = np.einsum('ik,ki->i', state.G[rows], state.X[:, cols])
    draws = mean + rng.standard_normal(len(rows)) / np.sqrt(psi_inv[rows])

    if cache is not None:
        cache.E_hat[rows, cols] += draws - data.values[rows, cols]
    data.values[rows, cols] = draws
    return data.values
