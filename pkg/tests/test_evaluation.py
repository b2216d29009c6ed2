import numpy as np
from pytest import approx, mark, raises
from scipy.stats import norm, wilcoxon

from nsfa import evaluation
from nsfa.entity import ObservationMatrix, PosteriorSample, TraceRecord
from nsfa.evaluation import (KHistogram, SyntheticSpec, generate_synthetic,
                             iterations_to_stable_k, linear_scaling_fit,
                             make_holdout, mean_reconstruction_error,
                             posterior_k_histogram, random_connectivity,
                             reconstruction_error, support_precision_recall)
from nsfa.sampler import ProposalSettings, SamplerConfig
from nsfa.schema import PredictiveAggregation, VariantKind
from nsfa.variants import ModelVariant, build_variant


def test_random_connectivity_has_no_empty_columns():
    rng = np.random.default_rng(0)
    Z = random_connectivity(20, 30, 0.02, rng)
    assert Z.shape == (20, 30)
    assert np.all(Z.sum(axis=0) > 0)


def test_generate_synthetic():
    Z = random_connectivity(30, 4, 0.3, np.random.default_rng(1))
    data = generate_synthetic(SyntheticSpec(Z, N=50, snr=10.0, seed=3))
    assert data.Y.shape == (30, 50)
    assert np.all(data.G[Z == 0] == 0)
    signal = data.G @ data.X
    assert data.noise_variance * 10.0 == approx(np.mean(signal ** 2))

    again = generate_synthetic(SyntheticSpec(Z, N=50, snr=10.0, seed=3))
    assert np.array_equal(data.Y, again.Y)


def test_synthetic_spec_validation():
    with raises(ValueError):
        SyntheticSpec(np.array([[1, 0], [1, 0]]), N=5)
    with raises(ValueError):
        SyntheticSpec(np.ones((2, 2)), N=5, snr=0.0)


def test_reconstruction_error():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((10, 3))
    assert reconstruction_error(G, G) == 0.0
    assert reconstruction_error(G, G[:, ::-1]) == 0.0
    assert reconstruction_error(G, -G) > 0.0
    assert reconstruction_error(G, -G, sign_aware=True) == 0.0


def test_reconstruction_error_with_extra_columns():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((10, 2))
    G_hat = np.hstack([G, rng.standard_normal((10, 5))])
    assert reconstruction_error(G, G_hat) == 0.0


def test_reconstruction_error_against_empty_model():
    G = np.array([[1.0, 0.0], [2.0, 1.0]])
    assert reconstruction_error(G, np.zeros((2, 0))) == approx(6.0 / 4)
    with raises(ValueError):
        reconstruction_error(G, np.zeros((3, 1)))


def test_support_perfect_recovery():
    rng = np.random.default_rng(4)
    Z = random_connectivity(20, 4, 0.3, rng)
    G = Z * rng.standard_normal(Z.shape)
    assert support_precision_recall(Z, G, G_true=G) == (1.0, 1.0)


def test_support_dense_prediction():
    rng = np.random.default_rng(5)
    Z = random_connectivity(20, 4, 0.3, rng)
    precision, recall = support_precision_recall(
        Z, rng.standard_normal((20, 4))
    )
    assert recall == 1.0
    assert precision == approx(Z.mean())


def test_support_threshold():
    Z = np.array([[1, 0], [0, 1]])
    G_hat = np.array([[1.0, 0.05], [0.0, 1.0]])
    assert support_precision_recall(Z, G_hat) == (2 / 3, 1.0)
    assert support_precision_recall(Z, G_hat, threshold=0.1) == (1.0, 1.0)
    with raises(ValueError):
        support_precision_recall(Z, G_hat, threshold=-1.0)


def sample_with(G, X, psi_inv) -> PosteriorSample:
    return PosteriorSample(
        0, np.asarray(G), np.asarray(X), np.asarray(psi_inv)
    )


def test_held_out_likelihood_single_sample():
    rng = np.random.default_rng(6)
    G, X = rng.standard_normal((4, 2)), rng.standard_normal((2, 5))
    psi_inv = np.array([1.0, 2.0, 0.5, 3.0])
    Y = G @ X + rng.standard_normal((4, 5))
    test = rng.random((4, 5)) < 0.3

    expected = norm.logpdf(
        Y, G @ X, 1 / np.sqrt(psi_inv)[:, None]
    )[test].sum()
    value = evaluation.test_log_likelihood(
        Y, test, [sample_with(G, X, psi_inv)]
    )
    assert value == approx(expected)


def test_held_out_aggregation():
    rng = np.random.default_rng(7)
    Y = rng.standard_normal((3, 4))
    test = np.ones((3, 4), dtype=bool)
    samples = [
        sample_with(rng.standard_normal((3, 1)), rng.standard_normal((1, 4)),
                    np.ones(3))
        for _ in range(5)
    ]
    density = evaluation.test_log_likelihood(Y, test, samples)
    log_mean = evaluation.test_log_likelihood(
        Y, test, samples, PredictiveAggregation.MEAN_LOG
    )
    assert density >= log_mean

    same = [samples[0]] * 3
    assert evaluation.test_log_likelihood(Y, test, same) == approx(
        evaluation.test_log_likelihood(
            Y, test, same, PredictiveAggregation.MEAN_LOG
        )
    )
    with raises(ValueError):
        evaluation.test_log_likelihood(Y, test, [])


def test_make_holdout():
    observed = np.ones((10, 10), dtype=bool)
    observed[0, :5] = False
    split = make_holdout(observed, 0.1, seed=3)
    assert split.test_mask(observed).sum() == round(0.1 * 95)
    assert not np.any(split.mask & ~observed)
    assert np.array_equal(split.mask, make_holdout(observed, 0.1, 3).mask)
    assert np.array_equal(make_holdout(observed, 0.0).mask, observed)
    with raises(ValueError):
        make_holdout(observed, 1.0)


def test_posterior_k_histogram():
    traces = [
        TraceRecord(i, k, 0.0, 1.0, 1.0, 1.0, 0, 0)
        for i, k in enumerate([9, 9, 3, 4, 4, 5], start=1)
    ]
    histogram = posterior_k_histogram(traces, burn_in=2)
    assert isinstance(histogram, KHistogram)
    assert histogram.rows() == [(3, 1), (4, 2), (5, 1)]
    assert histogram.mean == 4.0
    assert histogram.sd == approx(np.std([3, 4, 4, 5]))
    assert posterior_k_histogram([2, 2]).counts == {2: 2}
    with raises(ValueError):
        posterior_k_histogram([1, 2], burn_in=2)


def test_iterations_to_stable_k():
    assert iterations_to_stable_k([5] * 200, window=50) == 50
    trace = [2] * 100 + [10] * 200
    assert iterations_to_stable_k(trace, window=50, tolerance=1.0) == 144
    with raises(ValueError):
        iterations_to_stable_k([1, 2], window=5)


def test_linear_scaling_fit():
    slope, intercept, r_squared = linear_scaling_fit(
        [100, 200, 400, 800], [1.5, 2.5, 4.5, 8.5]
    )
    assert slope == approx(0.01)
    assert intercept == approx(0.5)
    assert r_squared == approx(1.0)


@mark.slow
def test_synthetic_feature_recovery():
    recovered = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        Z = random_connectivity(100, 16, 0.1, rng)
        data = generate_synthetic(SyntheticSpec(Z, N=100, seed=seed))
        sampler = build_variant(
            ModelVariant(), ObservationMatrix.complete(data.Y),
            config=SamplerConfig(log_every=0), rng=rng,
        )
        traces = list(sampler.run(1000))
        k_mean = posterior_k_histogram(traces, burn_in=900).mean
        recovered += 15 <= k_mean <= 17.5
    assert recovered >= 8


def synthetic_dataset(seed: int) -> tuple[ObservationMatrix, np.ndarray]:
    rng = np.random.default_rng(seed)
    Z = random_connectivity(100, 16, 0.1, rng)
    data = generate_synthetic(SyntheticSpec(Z, N=100, seed=seed))
    return ObservationMatrix.complete(data.Y), data.G


METHODS = {
    'nsfa': ModelVariant(),
    'sfa': ModelVariant(VariantKind.SFA, k_fixed=16),
    'afa': ModelVariant(VariantKind.AFA, k_fixed=20),
    'fa': ModelVariant(VariantKind.FA, k_fixed=20),
}


def method_errors(seed: int) -> dict[str, float]:
    observations, G_true = synthetic_dataset(seed)
    errors = {}
    for name, variant in METHODS.items():
        sampler = build_variant(
            variant, observations, config=SamplerConfig(log_every=0),
            rng=np.random.default_rng(seed),
        )
        samples = [
            sampler.snapshot()
            for trace in sampler.run(1000)
            if trace.iteration > 900 and not trace.iteration % 10
        ]
        errors[name] = mean_reconstruction_error(
            G_true, samples, sign_aware=True
        )
    return errors


@mark.slow
def test_method_ordering():
    errors = [method_errors(seed) for seed in range(10)]

    def less(better: str, worse: str) -> float:
        return wilcoxon(
            [e[better] for e in errors], [e[worse] for e in errors],
            alternative='less',
        ).pvalue

    assert less('nsfa', 'afa') < 0.05
    assert less('sfa', 'afa') < 0.05
    assert less('afa', 'fa') < 0.05


def stable_iterations(proposal: ProposalSettings, seed: int) -> int:
    observations, _ = synthetic_dataset(seed)
    sampler = build_variant(
        ModelVariant(), observations, config=SamplerConfig(log_every=0),
        proposal=proposal, rng=np.random.default_rng(seed),
    )
    return iterations_to_stable_k(
        [trace.k_active for trace in sampler.run(5000)]
    )


@mark.slow
def test_spike_proposal_mixes_faster():
    prior = ProposalSettings(pi_spike=0.0, lambda_mult=1.0)
    spike = ProposalSettings(pi_spike=0.1)
    slow = sum(stable_iterations(prior, seed) for seed in range(3))
    fast = sum(stable_iterations(spike, seed) for seed in range(3))
    assert slow >= 2 * fast
