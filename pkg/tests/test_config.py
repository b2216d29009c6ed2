from pathlib import Path

from pytest import raises

from nsfa.config import (IbpDrawConfig, RunConfig, load_config,
                         parse_config)
from nsfa.errors import ConfigError, ParseError
from nsfa.schema import (BirthRate, PredictiveAggregation, SingletonMode,
                         VariantKind)


def test_defaults():
    config = RunConfig()
    assert config.iterations == 3000
    assert config.burn_in == 2900
    assert config.holdout_fraction == 0.10
    assert config.proposal.pi_spike == 0.1
    assert config.proposal.lambda_mult == 1.0
    assert config.proposal.base_rate is BirthRate.LAST_CUSTOMER
    assert config.sampler.singletons is SingletonMode.DROP
    assert config.priors.e == config.priors.f == 1.0
    assert config.variant.kind is VariantKind.NSFA
    config.validate()
    assert len(config.kept_iterations()) == 100


def test_from_flat_casts_values():
    config = RunConfig.from_flat({
        'iterations': '20',
        'burn_in': '10',
        'sign_aware': 'yes',
        'aggregation': 'MEAN_LOG',
        'proposal.pi_spike': '0.25',
        'variant.kind': 'sfa',
        'variant.k_fixed': '16',
        'sampler.births': 'false',
        'sampler.singletons': 'replace',
        'proposal.base_rate': 'other_dimensions',
    })
    assert config.iterations == 20
    assert config.sign_aware is True
    assert config.aggregation is PredictiveAggregation.MEAN_LOG
    assert config.proposal.pi_spike == 0.25
    assert config.variant.kind is VariantKind.SFA
    assert config.variant.k_fixed == 16
    assert config.sampler.births is False
    assert config.sampler.singletons is SingletonMode.REPLACE
    assert config.proposal.base_rate is BirthRate.OTHER_DIMENSIONS
    assert config.priors.alpha == 1.0


def test_unknown_keys():
    with raises(ConfigError):
        RunConfig.from_flat({'iteration': '5'})
    with raises(ConfigError):
        RunConfig.from_flat({'proposal.pi': '0.1'})
    with raises(ConfigError):
        RunConfig.from_flat({'nothing.pi_spike': '0.1'})


def test_invalid_values():
    with raises(ConfigError):
        RunConfig.from_flat({'iterations': 'many'})
    with raises(ConfigError):
        RunConfig.from_flat({'sampler.births': 'maybe'})
    with raises(ConfigError):
        RunConfig.from_flat({'variant.kind': 'pca'})


def test_validate():
    for values in [
        {'iterations': '10', 'burn_in': '10'},
        {'burn_in': '-1'},
        {'thin': '0'},
        {'chains': '0'},
        {'holdout_fraction': '1.0'},
        {'proposal.lambda_mult': '0.5'},
        {'variant.kind': 'fa'},
    ]:
        with raises(ConfigError):
            RunConfig.from_flat(values).validate()


def test_flatten_restores_config():
    config = RunConfig.from_flat({
        'variant.kind': 'afa', 'variant.k_fixed': '20', 'seed': '9',
    })
    assert RunConfig.from_flat(config.to_json()) == config
    assert config.to_json()['variant.kind'] == 'afa'


def test_parse_config():
    text = '\n'.join([
        '# synthetic experiment',
        'iterations = 1000',
        '',
        'proposal.pi_spike=0.1',
    ])
    assert parse_config(text) == {
        'iterations': '1000', 'proposal.pi_spike': '0.1',
    }

    with raises(ParseError) as error:
        parse_config('iterations=5\nburn_in 2\n')
    assert error.value.line == 2

    with raises(ParseError) as error:
        parse_config('\n\nbogus=1\n')
    assert error.value.line == 3


def test_load_config_overrides(tmp_path: Path):
    path = tmp_path / 'run.conf'
    path.write_text('iterations=500\nburn_in=400\nseed=3\n', encoding='utf-8')
    config = load_config(path, {'seed': '11'})
    assert config.iterations == 500
    assert config.seed == 11

    with raises(LookupError):
        load_config(tmp_path / 'missing.conf')


def test_load_other_settings():
    config = load_config('', {'D': '12', 'alpha': '2.5'}, IbpDrawConfig)
    assert config == IbpDrawConfig(D=12, alpha=2.5)
