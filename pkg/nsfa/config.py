from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from nsfa.entity import PriorSettings, Settings
from nsfa.errors import ConfigError, ParseError
from nsfa.sampler import ProposalSettings, SamplerConfig
from nsfa.schema import PredictiveAggregation
from nsfa.variants import ModelVariant


@dataclass(frozen=True)
class RunConfig(Settings):
    '''
    One experiment. `mask_path` names a 0/1 CSV of entries visible to
    training; without it `holdout_fraction` of the observed entries are held
    out at random with `holdout_seed`. `truth_path` holds the generating
    loadings for reconstruction metrics.
    '''
    data_path: str = ''
    header: bool = False
    mask_path: str = ''
    holdout_fraction: float = 0.10
    holdout_seed: int = 0
    truth_path: str = ''
    iterations: int = 3000
    burn_in: int = 2900
    thin: int = 1
    chains: int = 1
    seed: int = 0
    output: str = 'output'
    threshold: float = 0.0
    sign_aware: bool = False
    aggregation: PredictiveAggregation = PredictiveAggregation.MEAN_DENSITY
    variant: ModelVariant = field(default_factory=ModelVariant)
    proposal: ProposalSettings = field(default_factory=ProposalSettings)
    priors: PriorSettings = field(default_factory=PriorSettings)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def validate(self) -> None:
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError(
                f'iterations > burn_in ≥ 0 violated: iterations='
                f'{self.iterations}, burn_in={self.burn_in}'
            )
        if self.thin < 1:
            raise ConfigError(f'thin ≥ 1 violated: thin={self.thin}')
        if self.chains < 1:
            raise ConfigError(f'chains ≥ 1 violated: chains={self.chains}')
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError(
                f'holdout_fraction {self.holdout_fraction} outside [0, 1)'
            )
        if self.threshold < 0:
            raise ConfigError(f'threshold {self.threshold} is negative')
        self.variant.validate()
        try:
            self.proposal.at_rate(1.0)
        except ValueError as error:
            raise ConfigError(str(error)) from None

    def kept_iterations(self) -> list[int]:
        return list(range(self.burn_in + 1, self.iterations + 1, self.thin))

    def to_json(self) -> dict[str, Any]:
        return {
            key: value.value if isinstance(value, Enum) else value
            for key, value in self.flatten().items()
        }


@dataclass(frozen=True)
class SimulationConfig(Settings):
    D: int = 100
    K: int = 16
    N: int = 100
    snr: float = 10.0
    density: float = 0.1
    datasets: int = 1
    seed: int = 0
    output: str = 'synthetic'


@dataclass(frozen=True)
class IbpDrawConfig(Settings):
    D: int = 100
    alpha: float = 1.0
    draws: int = 1
    seed: int = 0
    output: str = 'ibp'


def parse_config(text: str, settings: type[Settings] = RunConfig) -> dict:
    known = set(settings().flatten())
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, separator, value = line.partition('=')
        if not separator:
            raise ParseError(f'expected key=value, got {line!r}', number)
        key = key.strip()
        if key not in known:
            raise ParseError(f'unknown key {key}', number)
        values[key] = value.strip()
    return values


def load_config(
    path: str | Path,
    overrides: dict[str, Any] | None = None,
    settings: type[Settings] = RunConfig,
) -> Settings:
    values: dict[str, Any] = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise LookupError(f'config file not found: {path}')
        values = parse_config(path.read_text(encoding='utf-8'), settings)
    values.update(overrides or {})
    return settings.from_flat(values)
