from enum import StrEnum


class VariantKind(StrEnum):
    FA = 'fa'
    AFA = 'afa'
    SFA = 'sfa'
    FOK = 'fok'
    NSFA = 'nsfa'


class NoiseMode(StrEnum):
    ISOTROPIC = 'isotropic'
    INDEPENDENT = 'independent'
    SOFT_COUPLED = 'soft_coupled'


class PrecisionMode(StrEnum):
    SHARED = 'shared'
    FACTOR = 'factor'
    ELEMENT = 'element'


class SingletonMode(StrEnum):
    REPLACE = 'replace'
    DROP = 'drop'


class PredictiveAggregation(StrEnum):
    MEAN_DENSITY = 'mean_density'
    MEAN_LOG = 'mean_log'


class StorageDriver(StrEnum):
    MEMORY = 'memory'
    FILE = 'file'


class BirthRate(StrEnum):
    '''Base rate γ of the birth proposal: α/D or α/(D − 1).'''
    LAST_CUSTOMER = 'last_customer'
    OTHER_DIMENSIONS = 'other_dimensions'
