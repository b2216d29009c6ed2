import logging
from dataclasses import dataclass
from time import perf_counter
from typing import Iterator, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import expit
from scipy.stats import poisson

from nsfa.entity import (FeatureState, HyperParams, ObservationMatrix,
                         PosteriorSample, Settings, TraceRecord)
from nsfa.errors import InvalidStateError
from nsfa.ibp import sample_alpha
from nsfa.model import (impute_missing, log_likelihood_from_residual,
                        recompute_residual)
from nsfa.schema import BirthRate, NoiseMode, PrecisionMode, SingletonMode
from nsfa.variants import Variant, sample_fok_precisions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProposalSettings(Settings):
    pi_spike: float = 0.1
    lambda_mult: float = 1.0
    base_rate: BirthRate = BirthRate.LAST_CUSTOMER

    def at_rate(
        self,
        gamma_rate: float,
        prior_rate: Optional[float] = None,
    ) -> 'BirthProposalParams':
        return BirthProposalParams(
            self.pi_spike, self.lambda_mult, gamma_rate, prior_rate
        )

    def for_dimensions(self, alpha: float, D: int) -> 'BirthProposalParams':
        '''Singleton prior Poisson(α/D); proposal base rate per `base_rate`.'''
        prior_rate = alpha / D
        if self.base_rate is BirthRate.OTHER_DIMENSIONS and D > 1:
            return self.at_rate(alpha / (D - 1), prior_rate)
        return self.at_rate(prior_rate, prior_rate)


@dataclass(frozen=True)
class SamplerConfig(Settings):
    births: bool = True
    sample_noise: bool = True
    sample_lambda: bool = True
    sample_lambda_rate: bool = False
    singletons: SingletonMode = SingletonMode.DROP
    audit_tolerance: float = 1e-8
    log_every: int = 100


@dataclass(frozen=True)
class BirthProposalParams:
    pi_spike: float
    lambda_mult: float
    gamma_rate: float
    prior_rate: Optional[float] = None

    def __post_init__(self) -> None:
        if self.prior_rate is None:
            object.__setattr__(self, 'prior_rate', self.gamma_rate)
        if not 0 <= self.pi_spike <= 1:
            raise ValueError(f'pi_spike {self.pi_spike} outside [0, 1]')
        if not self.lambda_mult >= 1:
            raise ValueError(f'lambda_mult {self.lambda_mult} below 1')
        if not self.gamma_rate > 0:
            raise ValueError(f'gamma_rate {self.gamma_rate} not positive')
        if not self.prior_rate > 0:
            raise ValueError(f'prior_rate {self.prior_rate} not positive')

    def log_mass(self, kappa: int) -> float:
        '''log J(κ) = log[(1−π)Poisson(κ; λγ) + π·1(κ=1)]'''
        if self.pi_spike == 1:
            return 0.0 if kappa == 1 else -np.inf
        value = float(np.log1p(-self.pi_spike) + poisson.logpmf(
            kappa, self.lambda_mult * self.gamma_rate
        ))
        if kappa == 1 and self.pi_spike > 0:
            value = float(np.logaddexp(value, np.log(self.pi_spike)))
        return value

    def log_prior(self, kappa: int) -> float:
        return float(poisson.logpmf(kappa, self.prior_rate))

    def log_correction(self, kappa: int) -> float:
        '''log a_p = log Poisson(κ; α/D) − log J(κ)'''
        if (
            self.pi_spike == 0 and self.lambda_mult == 1
            and self.prior_rate == self.gamma_rate
        ):
            return 0.0
        return self.log_prior(kappa) - self.log_mass(kappa)


@dataclass
class MhWorkspace:
    '''
    Collapsed quantities for κ proposed features of one dimension:
    M = ψ⁻¹ggᵀ + I, rhs_n = ψ⁻¹gÊ_n and m_n = M⁻¹rhs_n, one column per
    sample.
    '''
    g: np.ndarray
    M: np.ndarray
    chol: np.ndarray
    rhs: np.ndarray
    means: np.ndarray

    @property
    def kappa(self) -> int:
        return len(self.g)

    def log_likelihood_ratio(self) -> float:
        if not self.kappa:
            return 0.0
        N = self.means.shape[1]
        log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        return -0.5 * N * log_det + 0.5 * float(np.sum(self.rhs * self.means))

    def draw_factors(self, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(self.means.shape)
        if not self.kappa:
            return noise
        return self.means + solve_triangular(
            self.chol, noise, lower=True, trans='T'
        )


def mh_workspace(
    residual_row: np.ndarray,
    g: np.ndarray,
    psi_inv: float,
) -> MhWorkspace:
    g = np.asarray(g, dtype=np.float64).ravel()
    kappa, N = len(g), len(residual_row)
    if not kappa:
        empty = np.zeros((0, 0))
        return MhWorkspace(g, empty, empty, np.zeros((0, N)), np.zeros((0, N)))

    M = psi_inv * np.outer(g, g) + np.eye(kappa)
    try:
        chol = cholesky(M, lower=True)
    except LinAlgError:
        raise InvalidStateError('birth precision matrix is not PD') from None
    rhs = psi_inv * np.outer(g, residual_row)
    return MhWorkspace(g, M, chol, rhs, cho_solve((chol, True), rhs))


def loading_conditional(
    residual_row: np.ndarray,
    factor_row: np.ndarray,
    psi_inv: float,
    lam: float,
    xx: Optional[float] = None,
) -> tuple[float, float]:
    if xx is None:
        xx = float(factor_row @ factor_row)
    lam_post = psi_inv * xx + lam
    mu = psi_inv / lam_post * float(factor_row @ residual_row)
    return mu, lam_post


def collapsed_zg_log_odds(
    residual_row: np.ndarray,
    factor_row: np.ndarray,
    psi_inv: float,
    lam: float,
    prior_log_odds: float,
    xx: Optional[float] = None,
) -> tuple[float, float, float]:
    '''
    Posterior log odds of z_dk = 1 with g_dk integrated out, given the
    residual row computed with g_dk = 0. Also returns the (μ, λ) of the
    conditional g_dk ~ N(μ, 1/λ).
    '''
    mu, lam_post = loading_conditional(
        residual_row, factor_row, psi_inv, lam, xx
    )
    if prior_log_odds == -np.inf:
        return -np.inf, mu, lam_post
    log_odds = (
        prior_log_odds
        + 0.5 * (np.log(lam) - np.log(lam_post))
        + 0.5 * lam_post * mu ** 2
    )
    return float(log_odds), mu, lam_post


def propose_kappa(
    params: BirthProposalParams,
    rng: np.random.Generator,
) -> tuple[int, float]:
    if rng.random() < params.pi_spike:
        kappa = 1
    else:
        kappa = int(rng.poisson(params.lambda_mult * params.gamma_rate))
    return kappa, params.log_mass(kappa)


def birth_acceptance_log_ratio(
    residual_row: np.ndarray,
    g: np.ndarray,
    psi_inv: float,
    params: BirthProposalParams,
) -> tuple[float, MhWorkspace]:
    '''
    log a_l + log a_p for adding the features with loadings `g` to a
    dimension whose residual row is `residual_row`, factor rows integrated
    out.
    '''
    workspace = mh_workspace(residual_row, g, psi_inv)
    log_ratio = (
        workspace.log_likelihood_ratio()
        + params.log_correction(workspace.kappa)
    )
    return log_ratio, workspace


@dataclass
class FactorPosterior:
    '''N(x_n; Λ⁻¹GᵀΨ⁻¹y_n, Λ⁻¹) with Λ = GᵀΨ⁻¹G + I, factored once.'''
    G: np.ndarray
    psi_inv: np.ndarray
    precision: np.ndarray
    chol: np.ndarray

    @classmethod
    def build(cls, G: np.ndarray, psi_inv: np.ndarray) -> 'FactorPosterior':
        K = G.shape[1]
        precision = G.T @ (psi_inv[:, None] * G) + np.eye(K)
        chol = cholesky(precision, lower=True) if K else np.zeros((0, 0))
        return cls(G, psi_inv, precision, chol)

    def mean(self, Y: np.ndarray) -> np.ndarray:
        if not self.G.shape[1]:
            return np.zeros((0, Y.shape[1]))
        return cho_solve(
            (self.chol, True), self.G.T @ (self.psi_inv[:, None] * Y)
        )

    def draw(self, Y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((self.G.shape[1], Y.shape[1]))
        if not self.G.shape[1]:
            return noise
        return self.mean(Y) + solve_triangular(
            self.chol, noise, lower=True, trans='T'
        )


def sample_x_column(
    n: int,
    Y: np.ndarray,
    posterior: FactorPosterior,
    rng: np.random.Generator,
) -> np.ndarray:
    return posterior.draw(Y[:, [n]], rng)[:, 0]


def sample_x(
    Y: np.ndarray,
    G: np.ndarray,
    psi_inv: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    return FactorPosterior.build(G, psi_inv).draw(Y, rng)


def lambda_posterior(
    state: FeatureState,
    hyper: HyperParams,
    shared: bool,
) -> tuple[np.ndarray, np.ndarray]:
    '''Gamma(c + m/2, d + ½ΣG²) shape and rate, per feature or pooled.'''
    m = state.counts()
    squares = (state.G ** 2).sum(axis=0)
    if shared:
        return (
            np.array([hyper.c + m.sum() / 2]),
            np.array([hyper.d + squares.sum() / 2]),
        )
    return hyper.c + m / 2, hyper.d + squares / 2


def sample_lambda(
    state: FeatureState,
    hyper: HyperParams,
    mode: PrecisionMode,
    rng: np.random.Generator,
    sample_rate: bool = False,
) -> np.ndarray:
    if mode is PrecisionMode.ELEMENT:
        hyper.lam_elem = sample_fok_precisions(state, hyper.c, hyper.d, rng)
        return hyper.lam_elem

    shape, rate = lambda_posterior(state, hyper, mode is PrecisionMode.SHARED)
    draws = rng.gamma(shape, 1.0 / rate)
    if mode is PrecisionMode.SHARED:
        hyper.lam_shared = float(draws[0])
        hyper.lam = np.full(state.K_active, hyper.lam_shared)
    else:
        hyper.lam = draws
        if sample_rate:
            hyper.d = sample_lambda_rate(hyper, rng)
    return hyper.lam


def sample_lambda_rate(hyper: HyperParams, rng: np.random.Generator) -> float:
    shape = hyper.c0 + hyper.c * len(hyper.lam)
    rate = hyper.d0 + float(hyper.lam.sum())
    return float(rng.gamma(shape, 1.0 / rate))


def noise_posterior(
    residual: np.ndarray,
    hyper: HyperParams,
    mode: NoiseMode,
) -> tuple[np.ndarray, np.ndarray]:
    D, N = residual.shape
    squares = (residual ** 2).sum(axis=1)
    if mode is NoiseMode.ISOTROPIC:
        return (
            np.array([hyper.a + D * N / 2]),
            np.array([hyper.b + squares.sum() / 2]),
        )
    return np.full(D, hyper.a + N / 2), hyper.b + squares / 2


def sample_noise(
    residual: np.ndarray,
    hyper: HyperParams,
    mode: NoiseMode,
    rng: np.random.Generator,
) -> np.ndarray:
    D = residual.shape[0]
    shape, rate = noise_posterior(residual, hyper, mode)
    draws = rng.gamma(shape, 1.0 / rate)
    hyper.psi_inv = np.broadcast_to(draws, D).copy()
    if mode is NoiseMode.SOFT_COUPLED:
        hyper.b = sample_noise_rate(hyper, rng)
    return hyper.psi_inv


def sample_noise_rate(hyper: HyperParams, rng: np.random.Generator) -> float:
    shape = hyper.a0 + hyper.a * len(hyper.psi_inv)
    rate = hyper.b0 + float(hyper.psi_inv.sum())
    return float(rng.gamma(shape, 1.0 / rate))


class Sampler:
    '''
    One chain. Owns a working copy of the data (unobserved entries are
    imputed in place), the feature state, hyperparameters, residual cache
    and generator; `sweep` runs one full iteration.
    '''

    def __init__(
        self,
        data: ObservationMatrix,
        variant: Variant,
        hyper: HyperParams,
        config: SamplerConfig,
        proposal: ProposalSettings,
        rng: np.random.Generator,
        state: Optional[FeatureState] = None,
    ) -> None:
        self.data = data.copy()
        self.variant = variant
        self.hyper = hyper
        self.config = config
        self.proposal = proposal
        self.rng = rng
        self.iteration = 0
        self.births = [0, 0]

        if state is None:
            state = self.initial_state()
        self.state = state
        self.state.validate()
        if len(self.hyper.lam) != self.state.K_active:
            raise InvalidStateError(
                f'{len(self.hyper.lam)} precisions for '
                f'{self.state.K_active} features'
            )

        self.fill_missing()
        self.cache = recompute_residual(self.data, self.state)
        self.prepare_sweep()

    @property
    def precision_mode(self) -> PrecisionMode:
        return self.variant.precision_mode

    @property
    def births_enabled(self) -> bool:
        return self.variant.nonparametric and self.config.births

    def prepare_sweep(self) -> None:
        self.m = self.state.counts()
        self.xx = np.einsum('kn,kn->k', self.state.X, self.state.X)

    def initial_state(self) -> FeatureState:
        D, N = self.data.D, self.data.N
        Z = self.variant.initial_support(D, self.hyper.alpha, self.rng)
        K = Z.shape[1]
        self.hyper.lam = self.new_precisions(K)
        if self.precision_mode is PrecisionMode.ELEMENT:
            self.hyper.lam_elem = self.rng.gamma(
                self.hyper.c, 1.0 / self.hyper.d, size=(D, K)
            )
            scale = 1.0 / np.sqrt(self.hyper.lam_elem)
        else:
            scale = 1.0 / np.sqrt(self.hyper.lam)[None, :]
        G = Z * self.rng.standard_normal((D, K)) * scale
        X = self.rng.standard_normal((K, N))
        return FeatureState(Z, G, X)

    def new_precisions(self, count: int) -> np.ndarray:
        if self.precision_mode is PrecisionMode.FACTOR:
            return self.rng.gamma(self.hyper.c, 1.0 / self.hyper.d, count)
        return np.full(count, self.hyper.lam_shared)

    def fill_missing(self) -> None:
        if not self.data.has_missing:
            return
        observed = np.where(self.data.mask, self.data.values, 0.0)
        counts = self.data.mask.sum(axis=1)
        means = observed.sum(axis=1) / np.maximum(counts, 1)
        self.data.values[self.data.missing] = np.broadcast_to(
            means[:, None], self.data.values.shape
        )[self.data.missing]

    def sample_z_and_g(self, d: int) -> None:
        state, E = self.state, self.cache.E_hat
        psi_inv = float(self.hyper.psi_inv[d])
        D, K = state.D, state.K_active

        for k in range(K):
            g_old = state.G[d, k]
            if g_old != 0:
                E[d] += g_old * state.X[k]
            z_old = int(state.Z[d, k])
            m_minus = int(self.m[k]) - z_old
            lam = self.hyper.loading_precision(d, k)

            if self.variant.frozen_support:
                z = 1
                mu, lam_post = loading_conditional(
                    E[d], state.X[k], psi_inv, lam, self.xx[k]
                )
            elif self.variant.nonparametric and m_minus == 0:
                z = int(
                    bool(z_old)
                    and self.config.singletons is SingletonMode.REPLACE
                )
                if z:
                    mu, lam_post = loading_conditional(
                        E[d], state.X[k], psi_inv, lam, self.xx[k]
                    )
            else:
                prior = self.variant.prior_log_odds(
                    m_minus, D, K, self.hyper.alpha
                )
                log_odds, mu, lam_post = collapsed_zg_log_odds(
                    E[d], state.X[k], psi_inv, lam, prior, self.xx[k]
                )
                z = int(self.rng.random() < expit(log_odds))

            if z:
                g = mu + self.rng.standard_normal() / np.sqrt(lam_post)
                E[d] -= g * state.X[k]
            else:
                g = 0.0
            state.Z[d, k] = z
            state.G[d, k] = g
            self.m[k] += z - z_old

    def birth_death(self, d: int) -> bool:
        '''
        Metropolis–Hastings move replacing the singleton features of
        dimension d (none in drop mode) with κ fresh ones.
        '''
        state, E = self.state, self.cache.E_hat
        psi_inv = float(self.hyper.psi_inv[d])
        params = self.proposal.for_dimensions(self.hyper.alpha, state.D)

        singles = np.flatnonzero((state.Z[d] == 1) & (self.m == 1))
        residual = E[d] + state.G[d, singles] @ state.X[singles]

        kappa, _ = propose_kappa(params, self.rng)
        lam_new = self.new_precisions(kappa)
        g = self.rng.standard_normal(kappa) / np.sqrt(lam_new)
        if not kappa and not len(singles):
            return False

        log_ratio, workspace = birth_acceptance_log_ratio(
            residual, g, psi_inv, params
        )
        if self.config.singletons is SingletonMode.REPLACE:
            log_ratio -= birth_acceptance_log_ratio(
                residual, state.G[d, singles], psi_inv, params
            )[0]

        self.births[0] += kappa
        if not np.log(self.rng.random()) < log_ratio:
            return False

        self.births[1] += kappa
        state.Z[d, singles] = 0
        state.G[d, singles] = 0.0
        self.m[singles] = 0
        self.execute_birth(d, workspace, lam_new, residual)
        return True

    def execute_birth(
        self,
        d: int,
        workspace: MhWorkspace,
        lam_new: np.ndarray,
        residual: np.ndarray,
    ) -> None:
        state, kappa = self.state, workspace.kappa
        if not kappa:
            self.cache.E_hat[d] = residual
            return

        x = workspace.draw_factors(self.rng)
        z = np.zeros((state.D, kappa), dtype=np.int8)
        z[d] = 1
        g = np.zeros((state.D, kappa))
        g[d] = workspace.g
        state.append_features(z, g, x)

        self.hyper.lam = np.concatenate([self.hyper.lam, lam_new])
        self.m = np.concatenate([self.m, np.ones(kappa, dtype=np.int64)])
        self.xx = np.concatenate([self.xx, np.einsum('kn,kn->k', x, x)])
        self.cache.E_hat[d] = residual - workspace.g @ x

    def sample_x(self) -> None:
        self.state.X = sample_x(
            self.data.values, self.state.G, self.hyper.psi_inv, self.rng
        )
        self.cache.refresh(self.data, self.state)

    def compact(self) -> None:
        keep = self.m > 0
        if keep.all():
            return
        self.state.compact(keep)
        self.hyper.compact(keep)
        self.m = self.m[keep]

    def sweep(self) -> TraceRecord:
        start = perf_counter()
        self.iteration += 1
        self.births = [0, 0]
        hyper = self.hyper

        if self.data.has_missing:
            impute_missing(
                self.data, self.state, hyper.psi_inv, self.rng, self.cache
            )

        self.prepare_sweep()
        for d in range(self.data.D):
            self.sample_z_and_g(d)
            if self.births_enabled:
                self.birth_death(d)

        if self.config.audit_tolerance > 0:
            self.cache.audit(
                self.data, self.state, self.config.audit_tolerance
            )

        self.sample_x()

        if self.variant.nonparametric and self.variant.spec.sample_alpha:
            hyper.alpha = sample_alpha(
                int(np.count_nonzero(self.m)), self.data.D,
                hyper.e, hyper.f, self.rng,
            )
        if self.config.sample_noise:
            sample_noise(
                self.cache.E_hat, hyper, self.variant.spec.noise_mode,
                self.rng,
            )
        if self.config.sample_lambda:
            sample_lambda(
                self.state, hyper, self.precision_mode, self.rng,
                self.config.sample_lambda_rate,
            )
        if self.variant.nonparametric:
            self.compact()

        record = TraceRecord(
            iteration=self.iteration,
            k_active=self.state.K_active,
            log_likelihood=log_likelihood_from_residual(
                self.cache.E_hat, self.data.mask, hyper.psi_inv
            ),
            alpha=float(hyper.alpha),
            lambda_mean=self.lambda_mean(),
            psi_inv_mean=float(hyper.psi_inv.mean()),
            births_proposed=self.births[0],
            births_accepted=self.births[1],
            elapsed_ms=(perf_counter() - start) * 1000,
        )
        logger.debug(
            'sweep %d: K=%d loglik=%.3f births %d/%d', record.iteration,
            record.k_active, record.log_likelihood, record.births_accepted,
            record.births_proposed,
        )
        every = self.config.log_every
        if every and not self.iteration % every:
            logger.info(
                'iteration %d: K=%d loglik=%.3f', record.iteration,
                record.k_active, record.log_likelihood,
            )
        return record

    def lambda_mean(self) -> float:
        if self.precision_mode is PrecisionMode.ELEMENT:
            lam = self.hyper.lam_elem
        else:
            lam = self.hyper.lam
        if lam is None or not lam.size:
            return 0.0
        return float(lam.mean())

    def run(self, iterations: int) -> Iterator[TraceRecord]:
        for _ in range(iterations):
            yield self.sweep()

    def snapshot(self) -> PosteriorSample:
        return PosteriorSample(
            iteration=self.iteration,
            G=self.state.G.copy(),
            X=self.state.X.copy(),
            Z=self.state.Z.copy(),
            psi_inv=self.hyper.psi_inv.copy(),
            lam=self.hyper.lam.copy(),
            alpha=float(self.hyper.alpha),
            lambda_rate=float(self.hyper.d),
            noise_rate=float(self.hyper.b),
        )
