from dataclasses import _MISSING_TYPE, dataclass, field, fields
from enum import Enum
from typing import Any, Optional, get_type_hints

import numpy as np

from nsfa.errors import ConfigError, InvalidStateError

TRUE_TOKENS = {'1', 'true', 'yes', 'on'}
FALSE_TOKENS = {'0', 'false', 'no', 'off'}


@dataclass(frozen=True)
class Settings:
    @classmethod
    def get_default_values(cls) -> dict:
        return {
            key: field.default
            for key, field in cls.__dataclass_fields__.items()
            if not isinstance(field.default, _MISSING_TYPE)
        }

    @classmethod
    def from_values(cls, values: dict[str, Any]) -> 'Settings':
        hints = get_type_hints(cls)
        data = cls.get_default_values()
        for key, value in values.items():
            if key not in hints:
                raise ConfigError(f'unknown key {key} for {cls.__name__}')
            data[key] = cast_value(key, hints[key], value)
        return cls(**data)

    @classmethod
    def from_flat(cls, values: dict[str, Any]) -> 'Settings':
        '''Dotted keys (`proposal.pi_spike`) address nested settings.'''
        hints = get_type_hints(cls)
        flat: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {}
        for key, value in values.items():
            section, _, name = key.partition('.')
            if not name:
                flat[key] = value
                continue
            hint = hints.get(section)
            if not (isinstance(hint, type) and issubclass(hint, Settings)):
                raise ConfigError(f'unknown key {key}')
            nested.setdefault(section, {})[name] = value

        for section, items in nested.items():
            flat[section] = hints[section].from_flat(items)
        return cls.from_values(flat)

    def flatten(self) -> dict[str, Any]:
        values: dict[str, Any] = {}
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, Settings):
                for key, inner in value.flatten().items():
                    values[f'{item.name}.{key}'] = inner
            else:
                values[item.name] = value
        return values


def cast_value(key: str, hint: type, value: Any) -> Any:
    if not isinstance(value, str):
        return value

    token = value.strip()
    try:
        if hint is bool:
            if token.lower() in TRUE_TOKENS:
                return True
            if token.lower() in FALSE_TOKENS:
                return False
            raise ValueError(token)
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(token.lower())
        if hint is int:
            return int(token)
        if hint is float:
            return float(token)
    except ValueError:
        raise ConfigError(f'invalid value {value!r} for {key}') from None

    return token


@dataclass
class ObservationMatrix:
    '''
    D×N data, rows are dimensions (genes) and columns samples. `mask` is
    true where an entry is observed; values under a false mask are working
    slots the sampler imputes.
    '''
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=np.float64, ndmin=2)
        self.mask = np.array(self.mask, dtype=bool, ndmin=2)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise InvalidStateError(
                f'values {self.values.shape} and mask {self.mask.shape} differ'
            )
        if min(self.values.shape) < 1:
            raise InvalidStateError('observation matrix needs D ≥ 1, N ≥ 1')
        if not np.isfinite(self.values[self.mask]).all():
            raise InvalidStateError('observed entries must be finite')
        self.mask.flags.writeable = False

    @classmethod
    def complete(cls, values: np.ndarray) -> 'ObservationMatrix':
        values = np.array(values, dtype=np.float64, ndmin=2)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def D(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return ~self.mask

    @property
    def has_missing(self) -> bool:
        return not self.mask.all()

    def copy(self) -> 'ObservationMatrix':
        return ObservationMatrix(self.values.copy(), self.mask.copy())


@dataclass
class FeatureState:
    Z: np.ndarray
    G: np.ndarray
    X: np.ndarray

    def __post_init__(self) -> None:
        self.Z = np.array(self.Z, dtype=np.int8, ndmin=2)
        self.G = np.array(self.G, dtype=np.float64, ndmin=2)
        self.X = np.array(self.X, dtype=np.float64, ndmin=2)

    @classmethod
    def empty(cls, D: int, N: int) -> 'FeatureState':
        return cls(
            np.zeros((D, 0), dtype=np.int8),
            np.zeros((D, 0)),
            np.zeros((0, N)),
        )

    @property
    def K_active(self) -> int:
        return self.Z.shape[1]

    @property
    def D(self) -> int:
        return self.Z.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def counts(self) -> np.ndarray:
        return self.Z.sum(axis=0, dtype=np.int64)

    def validate(self) -> None:
        if self.G.shape != self.Z.shape:
            raise InvalidStateError(
                f'G {self.G.shape} does not match Z {self.Z.shape}'
            )
        if self.X.shape[0] != self.K_active:
            raise InvalidStateError(
                f'X has {self.X.shape[0]} rows for {self.K_active} features'
            )
        if not (np.isfinite(self.G).all() and np.isfinite(self.X).all()):
            raise InvalidStateError('non-finite loadings or factors')
        if np.any(self.G[self.Z == 0] != 0):
            raise InvalidStateError('nonzero loading outside the support')

    def append_features(
        self,
        z: np.ndarray,
        g: np.ndarray,
        x: np.ndarray,
    ) -> None:
        self.Z = np.hstack([self.Z, np.asarray(z, dtype=np.int8)])
        self.G = np.hstack([self.G, g])
        self.X = np.vstack([self.X, x])

    def compact(self, keep: np.ndarray) -> None:
        self.Z = self.Z[:, keep]
        self.G = self.G[:, keep]
        self.X = self.X[keep, :]

    def copy(self) -> 'FeatureState':
        return FeatureState(self.Z.copy(), self.G.copy(), self.X.copy())


@dataclass
class HyperParams:
    '''
    Current hyperparameter values together with their Gamma priors, all in
    shape/rate form. `lam` always holds one precision per feature; in shared
    mode every entry equals `lam_shared`. `lam_elem` is only set for
    per-element (Student-t) loadings.
    '''
    alpha: float = 1.0
    e: float = 1.0
    f: float = 1.0
    lam: np.ndarray = field(default_factory=lambda: np.ones(0))
    lam_shared: float = 1.0
    lam_elem: Optional[np.ndarray] = None
    c: float = 1.0
    d: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    psi_inv: np.ndarray = field(default_factory=lambda: np.ones(1))
    a: float = 1.0
    b: float = 1.0
    a0: float = 1.0
    b0: float = 1.0

    def __post_init__(self) -> None:
        self.lam = np.array(self.lam, dtype=np.float64, ndmin=1)
        self.psi_inv = np.array(self.psi_inv, dtype=np.float64, ndmin=1)
        for item in fields(self):
            value = getattr(self, item.name)
            if value is None:
                continue
            if np.any(np.asarray(value) <= 0):
                raise InvalidStateError(f'{item.name} must be positive')

    def loading_precision(self, d: int, k: int) -> float:
        if self.lam_elem is not None:
            return float(self.lam_elem[d, k])
        return float(self.lam[k])

    def compact(self, keep: np.ndarray) -> None:
        self.lam = self.lam[keep]
        if self.lam_elem is not None:
            self.lam_elem = self.lam_elem[:, keep]

    def copy(self) -> 'HyperParams':
        values = {
            item.name: getattr(self, item.name) for item in fields(self)
        }
        for key, value in values.items():
            if isinstance(value, np.ndarray):
                values[key] = value.copy()
        return HyperParams(**values)


@dataclass
class TraceRecord:
    iteration: int
    k_active: int
    log_likelihood: float
    alpha: float
    lambda_mean: float
    psi_inv_mean: float
    births_proposed: int
    births_accepted: int
    elapsed_ms: float = 0.0

    @classmethod
    def columns(cls) -> list[str]:
        return [item.name for item in fields(cls) if item.name != 'elapsed_ms']

    def row(self) -> list[str]:
        row = []
        for name in self.columns():
            value = getattr(self, name)
            if isinstance(value, (int, np.integer)):
                row.append(str(int(value)))
            else:
                row.append(repr(float(value)))
        return row


@dataclass(frozen=True)
class PriorSettings(Settings):
    alpha: float = 1.0
    e: float = 1.0
    f: float = 1.0
    c: float = 1.0
    d: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    a0: float = 1.0
    b0: float = 1.0

    def hyper_params(self, D: int) -> HyperParams:
        return HyperParams(
            lam=np.ones(0),
            lam_shared=self.c / self.d,
            psi_inv=np.ones(D),
            **self.__dict__,
        )


@dataclass
class PosteriorSample:
    iteration: int
    G: np.ndarray
    X: np.ndarray
    psi_inv: np.ndarray
    Z: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    alpha: float = 0.0
    lambda_rate: float = 0.0
    noise_rate: float = 0.0
