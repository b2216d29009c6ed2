from dataclasses import dataclass
from functools import cache
from typing import TYPE_CHECKING, Optional

import numpy as np

from nsfa.entity import (FeatureState, ObservationMatrix, PriorSettings,
                         Settings)
from nsfa.errors import ConfigError
from nsfa.ibp import (conditional_inclusion_log_odds, sample_finite,
                      sample_ibp)
from nsfa.schema import NoiseMode, PrecisionMode, VariantKind

if TYPE_CHECKING:
    from nsfa.sampler import ProposalSettings, Sampler, SamplerConfig


@dataclass(frozen=True)
class ModelVariant(Settings):
    '''`k_fixed` = 0 means no fixed K (the nonparametric model).'''
    kind: VariantKind = VariantKind.NSFA
    k_fixed: int = 0
    noise_mode: NoiseMode = NoiseMode.INDEPENDENT
    sample_alpha: bool = False
    shared_lambda: bool = False

    def validate(self) -> None:
        if self.kind is VariantKind.NSFA:
            if self.k_fixed:
                raise ConfigError('NSFA ⇒ K_fixed absent (variant.k_fixed=0)')
        elif self.k_fixed < 1:
            raise ConfigError(f'{self.kind.name} ⇒ K_fixed ≥ 1')
        if self.sample_alpha and self.kind is not VariantKind.NSFA:
            raise ConfigError(
                f'sample_alpha ⇒ NSFA (got {self.kind.name}); the finite '
                'prior has no conjugate alpha update'
            )


def finite_z_log_odds(m_minus: int, D: int, K: int, alpha: float) -> float:
    '''Prior odds of one element under the finite beta-Bernoulli model.'''
    if K < 1:
        raise ValueError(f'K must be at least 1, got {K}')
    if not 0 <= m_minus <= D - 1:
        raise ValueError(f'm_minus={m_minus} outside [0, {D - 1}]')
    return float(np.log(m_minus + alpha / K) - np.log(D - m_minus))


def sample_fok_precisions(
    state: FeatureState,
    c: float,
    d: float,
    rng: np.random.Generator,
) -> np.ndarray:
    return rng.gamma(c + 0.5, 1.0 / (d + 0.5 * state.G ** 2))


class Variant:
    kind: VariantKind
    frozen_support: bool = False
    nonparametric: bool = False

    def __init__(self, spec: ModelVariant) -> None:
        self.spec = spec

    @property
    def precision_mode(self) -> PrecisionMode:
        if self.spec.shared_lambda:
            return PrecisionMode.SHARED
        return PrecisionMode.FACTOR

    def prior_log_odds(
        self,
        m_minus: int,
        D: int,
        K: int,
        alpha: float,
    ) -> float:
        return 0.0

    def initial_support(
        self,
        D: int,
        alpha: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        return np.ones((D, self.spec.k_fixed), dtype=np.int8)


class FactorAnalysis(Variant):
    kind = VariantKind.FA
    frozen_support = True

    @property
    def precision_mode(self) -> PrecisionMode:
        return PrecisionMode.SHARED


class ArdFactorAnalysis(Variant):
    kind = VariantKind.AFA
    frozen_support = True


class StudentFactorAnalysis(Variant):
    kind = VariantKind.FOK
    frozen_support = True

    @property
    def precision_mode(self) -> PrecisionMode:
        return PrecisionMode.ELEMENT


class FiniteSparseFactorAnalysis(Variant):
    kind = VariantKind.SFA

    def prior_log_odds(
        self,
        m_minus: int,
        D: int,
        K: int,
        alpha: float,
    ) -> float:
        return finite_z_log_odds(m_minus, D, K, alpha)

    def initial_support(
        self,
        D: int,
        alpha: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        return sample_finite(D, self.spec.k_fixed, alpha, rng)


class NonparametricSparseFactorAnalysis(Variant):
    kind = VariantKind.NSFA
    nonparametric = True

    def prior_log_odds(
        self,
        m_minus: int,
        D: int,
        K: int,
        alpha: float,
    ) -> float:
        return conditional_inclusion_log_odds(m_minus, D)

    def initial_support(
        self,
        D: int,
        alpha: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        return sample_ibp(D, alpha, rng).Z


def get_variant(spec: ModelVariant) -> Variant:
    spec.validate()
    map = get_variant_map()
    if spec.kind not in map:
        raise LookupError(f'No variant implementation found: {spec.kind}')
    return map[spec.kind](spec)


@cache
def get_variant_map() -> dict[VariantKind, type[Variant]]:
    map: dict[VariantKind, type[Variant]] = {}
    for variant in Variant.__subclasses__():
        if variant.kind in map:
            raise LookupError(f'Duplicate variant: {variant.kind}')
        map[variant.kind] = variant

    return map


def initial_noise_precisions(
    data: ObservationMatrix,
    mode: NoiseMode,
) -> np.ndarray:
    counts = data.mask.sum(axis=1)
    observed = np.where(data.mask, data.values, 0.0)
    if mode is NoiseMode.ISOTROPIC:
        mean = observed.sum() / counts.sum()
        squares = np.where(data.mask, data.values - mean, 0.0) ** 2
        variance = np.full(data.D, squares.sum() / counts.sum())
    else:
        mean = observed.sum(axis=1) / np.maximum(counts, 1)
        squares = np.where(data.mask, data.values - mean[:, None], 0.0) ** 2
        variance = squares.sum(axis=1) / np.maximum(counts, 1)
    variance = np.where(np.isfinite(variance) & (variance > 0), variance, 1.0)
    return 1.0 / variance


def build_variant(
    variant: ModelVariant,
    data: ObservationMatrix,
    priors: Optional[PriorSettings] = None,
    config: Optional['SamplerConfig'] = None,
    proposal: Optional['ProposalSettings'] = None,
    rng: Optional[np.random.Generator] = None,
) -> 'Sampler':
    from nsfa.sampler import ProposalSettings, Sampler, SamplerConfig

    implementation = get_variant(variant)
    hyper = (priors or PriorSettings()).hyper_params(data.D)
    hyper.psi_inv = initial_noise_precisions(data, variant.noise_mode)

    return Sampler(
        data=data,
        variant=implementation,
        hyper=hyper,
        config=config or SamplerConfig(),
        proposal=proposal or ProposalSettings(),
        rng=rng or np.random.default_rng(),
    )
