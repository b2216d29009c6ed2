import json
import logging
from dataclasses import dataclass, field
from functools import partial
from hashlib import sha256
from importlib.metadata import PackageNotFoundError, version
from io import StringIO
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from anyio import create_task_group, to_thread

from nsfa.config import IbpDrawConfig, RunConfig, SimulationConfig
from nsfa.entity import ObservationMatrix, PosteriorSample, TraceRecord
from nsfa.evaluation import (SyntheticSpec, generate_synthetic, make_holdout,
                             mean_reconstruction_error, posterior_k_histogram,
                             random_connectivity, support_precision_recall,
                             test_log_likelihood)
from nsfa.ibp import left_ordered_form, sample_ibp
from nsfa.matrix import format_matrix, load_matrix, parse_matrix
from nsfa.storage import Storage, get_storage
from nsfa.variants import build_variant

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
SAMPLE_FILES = ('G', 'X', 'Z', 'lambda', 'psi_inv')


@dataclass
class IterationTiming:
    iteration: int
    k_active: int
    elapsed_ms: float

    @classmethod
    def from_trace(cls, trace: TraceRecord) -> 'IterationTiming':
        return cls(trace.iteration, trace.k_active, trace.elapsed_ms)

    @property
    def ms_per_feature(self) -> float:
        return self.elapsed_ms / max(self.k_active, 1)


@dataclass
class ChainResult:
    index: int
    traces: list[TraceRecord] = field(default_factory=list)
    samples: list[PosteriorSample] = field(default_factory=list)


@dataclass
class RunResult:
    chains: list[ChainResult]
    metrics: dict[str, float]
    files: dict[str, str]


def run_chain(
    index: int,
    config: RunConfig,
    data: ObservationMatrix,
    seed: np.random.SeedSequence,
) -> ChainResult:
    sampler = build_variant(
        config.variant, data, config.priors, config.sampler,
        config.proposal, np.random.default_rng(seed),
    )
    kept = set(config.kept_iterations())
    result = ChainResult(index)

    logger.info(
        'chain %d: %s on %dx%d, %d iterations', index,
        config.variant.kind, data.D, data.N, config.iterations,
    )
    for trace in sampler.run(config.iterations):
        result.traces.append(trace)
        if trace.iteration in kept:
            result.samples.append(sampler.snapshot())
    logger.info(
        'chain %d finished: K=%d', index, result.traces[-1].k_active
    )
    return result


def digest(text: str) -> str:
    return sha256(text.encode('utf-8')).hexdigest()


def format_rows(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    table = np.array(
        [[str(value) for value in row] for row in rows], dtype=str
    ).reshape(-1, len(columns))
    buffer = StringIO()
    np.savetxt(
        buffer, table, fmt='%s', delimiter=',',
        header=','.join(columns), comments='',
    )
    return buffer.getvalue()


def parse_rows(text: str) -> list[dict[str, str]]:
    if not text.strip():
        return []
    table = np.loadtxt(StringIO(text), dtype=str, delimiter=',', ndmin=2)
    columns = table[0].tolist()
    return [dict(zip(columns, row.tolist())) for row in table[1:]]


def format_vector(values: np.ndarray) -> str:
    return format_matrix(np.asarray(values, dtype=np.float64)[None, :])


def read_array(text: str, empty_shape: tuple[int, ...]) -> np.ndarray:
    if not text.strip():
        return np.zeros(empty_shape)
    return parse_matrix(text).values


def sample_files(sample: PosteriorSample) -> dict[str, str]:
    Z = sample.Z if sample.Z is not None else sample.G != 0
    lam = sample.lam if sample.lam is not None else np.zeros(0)
    return {
        'G': format_matrix(sample.G),
        'X': format_matrix(sample.X),
        'Z': format_matrix(Z.astype(np.int8)),
        'lambda': format_vector(lam),
        'psi_inv': format_vector(sample.psi_inv),
    }


def emit_timing_report(
    timings: Sequence[IterationTiming],
    chain: int = 0,
) -> list[list[str]]:
    '''
    Rows of chain, iteration, k_active, ms and ms per feature, closed by
    mean and sd rows. K=0 iterations count as one feature.
    '''
    rows = [
        [str(chain), str(t.iteration), str(t.k_active),
         repr(t.elapsed_ms), repr(t.ms_per_feature)]
        for t in timings
    ]
    if not timings:
        return rows
    table = np.array([
        [t.k_active, t.elapsed_ms, t.ms_per_feature] for t in timings
    ], dtype=np.float64)
    for label, summary in (('mean', table.mean(0)), ('sd', table.std(0))):
        rows.append(
            [str(chain), label] + [repr(float(value)) for value in summary]
        )
    return rows


def get_versions() -> dict[str, str]:
    versions = {}
    for package in ('nsfa', 'numpy', 'scipy', 'anyio'):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = 'unknown'
    return versions


class Runner:
    def __init__(self, storage: Optional[Storage] = None) -> None:
        self.storage = storage

    def get_storage(self, dsn: str) -> Storage:
        return self.storage or get_storage(dsn)

    async def write(
        self,
        storage: Storage,
        files: dict[str, str],
        path: str,
        text: str,
    ) -> None:
        await storage.write(path, text)
        files[path] = digest(text)
        logger.debug('artifact %s', path)

    async def write_manifest(
        self,
        storage: Storage,
        files: dict[str, str],
        config: dict[str, Any],
        seed: int,
    ) -> None:
        manifest = {
            'config': config,
            'seed': seed,
            'versions': get_versions(),
            'files': dict(sorted(files.items())),
        }
        await storage.write(MANIFEST, json.dumps(manifest, indent=2) + '\n')

    async def read_manifest(self, storage: Storage) -> dict[str, Any]:
        return json.loads(await storage.read(MANIFEST))

    def split(
        self,
        config: RunConfig,
        data: ObservationMatrix,
    ) -> tuple[ObservationMatrix, np.ndarray]:
        '''Training matrix and the mask of held-out test entries.'''
        if config.mask_path:
            visible = load_matrix(config.mask_path).values != 0
            if visible.shape != data.mask.shape:
                raise ValueError(
                    f'{config.mask_path}: mask {visible.shape} does not '
                    f'match data {data.mask.shape}'
                )
            train = data.mask & visible
        elif config.holdout_fraction > 0:
            train = make_holdout(
                data.mask, config.holdout_fraction, config.holdout_seed
            ).mask
        else:
            train = data.mask.copy()
        return ObservationMatrix(data.values, train), data.mask & ~train

    def compute_metrics(
        self,
        config: RunConfig,
        data: ObservationMatrix,
        test_mask: np.ndarray,
        k_trace: Sequence[int],
        samples: Sequence[PosteriorSample],
    ) -> tuple[dict[str, float], list[tuple[int, int]]]:
        histogram = posterior_k_histogram(k_trace)
        metrics = {
            'k_mean': histogram.mean,
            'k_sd': histogram.sd,
            'samples': float(len(samples)),
        }
        if test_mask.any() and samples:
            metrics['test_log_likelihood'] = test_log_likelihood(
                data.values, test_mask, samples, config.aggregation
            )
        if config.truth_path and samples:
            G_true = load_matrix(config.truth_path).values
            metrics['reconstruction_error'] = mean_reconstruction_error(
                G_true, samples, config.sign_aware
            )
            scores = np.array([
                support_precision_recall(
                    G_true != 0, sample.G, config.threshold,
                    config.sign_aware, G_true,
                )
                for sample in samples
            ])
            metrics['precision'] = float(scores[:, 0].mean())
            metrics['recall'] = float(scores[:, 1].mean())
        return metrics, histogram.rows()

    async def write_metrics(
        self,
        storage: Storage,
        files: dict[str, str],
        metrics: dict[str, float],
        histogram: list[tuple[int, int]],
    ) -> None:
        await self.write(storage, files, 'metrics.csv', format_rows(
            ['metric', 'value'],
            [(key, repr(float(value))) for key, value in metrics.items()],
        ))
        await self.write(
            storage, files, 'k_histogram.csv',
            format_rows(['k', 'count'], histogram),
        )

    async def run(self, config: RunConfig) -> RunResult:
        config.validate()
        data = load_matrix(config.data_path, config.header)
        training, test_mask = self.split(config, data)

        seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
        chains: list[Optional[ChainResult]] = [None] * config.chains

        async def start(index: int) -> None:
            chains[index] = await to_thread.run_sync(partial(
                run_chain, index, config, training, seeds[index]
            ))

        try:
            async with create_task_group() as tg:
                for index in range(config.chains):
                    tg.start_soon(start, index)
        except ExceptionGroup as group:
            raise group.exceptions[0] from None

        results = [chain for chain in chains if chain is not None]
        storage = self.get_storage(config.output)
        files: dict[str, str] = {}
        for chain in results:
            await self.write_chain(storage, files, chain)

        if test_mask.any():
            await self.write(
                storage, files, 'heldout_mask.csv',
                format_matrix(training.mask.astype(np.int8)),
            )

        k_trace = [
            trace.k_active for chain in results
            for trace in chain.traces if trace.iteration > config.burn_in
        ]
        samples = [sample for chain in results for sample in chain.samples]
        metrics, histogram = self.compute_metrics(
            config, data, test_mask, k_trace, samples
        )
        await self.write_metrics(storage, files, metrics, histogram)
        await self.write_manifest(
            storage, files, config.to_json(), config.seed
        )
        return RunResult(results, metrics, files)

    async def write_chain(
        self,
        storage: Storage,
        files: dict[str, str],
        chain: ChainResult,
    ) -> None:
        prefix = f'chain-{chain.index}'
        await self.write(storage, files, f'{prefix}/trace.csv', format_rows(
            TraceRecord.columns(), [trace.row() for trace in chain.traces]
        ))
        await self.write(storage, files, f'{prefix}/timing.csv', format_rows(
            ['iteration', 'k_active', 'elapsed_ms'],
            [
                (t.iteration, t.k_active, repr(float(t.elapsed_ms)))
                for t in map(IterationTiming.from_trace, chain.traces)
            ],
        ))
        await self.write(storage, files, f'{prefix}/hyper.csv', format_rows(
            ['iteration', 'alpha', 'lambda_rate', 'noise_rate'],
            [
                (s.iteration, repr(s.alpha), repr(s.lambda_rate),
                 repr(s.noise_rate))
                for s in chain.samples
            ],
        ))
        batch = {
            f'{prefix}/samples/{sample.iteration}/{name}.csv': text
            for sample in chain.samples
            for name, text in sample_files(sample).items()
        }
        await storage.write_all(batch)
        files.update(
            (path, digest(text))
            for path, text in batch.items()
        )

    async def read_samples(
        self,
        storage: Storage,
        prefix: str,
        D: int,
        N: int,
    ) -> list[PosteriorSample]:
        hyper = {
            int(row['iteration']): row
            for row in parse_rows(await storage.read(f'{prefix}/hyper.csv'))
        }
        samples = []
        for iteration, row in sorted(hyper.items()):
            base = f'{prefix}/samples/{iteration}'
            texts = {
                name: await storage.read(f'{base}/{name}.csv')
                for name in SAMPLE_FILES
            }
            samples.append(PosteriorSample(
                iteration=iteration,
                G=read_array(texts['G'], (D, 0)),
                X=read_array(texts['X'], (0, N)),
                Z=read_array(texts['Z'], (D, 0)).astype(np.int8),
                lam=read_array(texts['lambda'], (1, 0))[0],
                psi_inv=read_array(texts['psi_inv'], (1, D))[0],
                alpha=float(row['alpha']),
                lambda_rate=float(row['lambda_rate']),
                noise_rate=float(row['noise_rate']),
            ))
        return samples

    async def metrics(self, output: str) -> dict[str, float]:
        '''Recompute metrics.csv and k_histogram.csv from saved samples.'''
        storage = self.get_storage(output)
        manifest = await self.read_manifest(storage)
        config = RunConfig.from_flat(manifest['config'])
        data = load_matrix(config.data_path, config.header)

        if await storage.exists('heldout_mask.csv'):
            visible = parse_matrix(
                await storage.read('heldout_mask.csv')
            ).values != 0
            test_mask = data.mask & ~visible
        else:
            test_mask = np.zeros(data.mask.shape, dtype=bool)

        k_trace: list[int] = []
        samples: list[PosteriorSample] = []
        for index in range(config.chains):
            prefix = f'chain-{index}'
            rows = parse_rows(await storage.read(f'{prefix}/trace.csv'))
            k_trace.extend(
                int(row['k_active']) for row in rows
                if int(row['iteration']) > config.burn_in
            )
            samples.extend(
                await self.read_samples(storage, prefix, data.D, data.N)
            )

        metrics, histogram = self.compute_metrics(
            config, data, test_mask, k_trace, samples
        )
        files = dict(manifest['files'])
        await self.write_metrics(storage, files, metrics, histogram)
        await self.write_manifest(
            storage, files, manifest['config'], manifest['seed']
        )
        return metrics

    async def timing(self, output: str) -> str:
        storage = self.get_storage(output)
        manifest = await self.read_manifest(storage)
        rows: list[list[str]] = []
        for index in range(int(manifest['config']['chains'])):
            text = await storage.read(f'chain-{index}/timing.csv')
            timings = [
                IterationTiming(
                    int(row['iteration']), int(row['k_active']),
                    float(row['elapsed_ms']),
                )
                for row in parse_rows(text)
            ]
            rows.extend(emit_timing_report(timings, index))

        report = format_rows(
            ['chain', 'iteration', 'k_active', 'ms', 'ms_per_feature'], rows
        )
        files = dict(manifest['files'])
        await self.write(storage, files, 'timing-report.csv', report)
        await self.write_manifest(
            storage, files, manifest['config'], manifest['seed']
        )
        return report

    async def simulate(self, config: SimulationConfig) -> list[str]:
        storage = self.get_storage(config.output)
        seeds = np.random.SeedSequence(config.seed).spawn(config.datasets)
        files: dict[str, str] = {}
        for index, seed in enumerate(seeds):
            rng = np.random.default_rng(seed)
            Z = random_connectivity(config.D, config.K, config.density, rng)
            synthetic = generate_synthetic(
                SyntheticSpec(Z, config.N, config.snr), rng
            )
            prefix = f'dataset-{index}'
            for name, values in (
                ('Y', synthetic.Y), ('G', synthetic.G),
                ('X', synthetic.X), ('Z', synthetic.Z),
            ):
                await self.write(
                    storage, files, f'{prefix}/{name}.csv',
                    format_matrix(values),
                )
            await self.write(
                storage, files, f'{prefix}/noise.csv', format_rows(
                    ['noise_variance'], [[repr(synthetic.noise_variance)]]
                ),
            )
            logger.info(
                'dataset %d: D=%d K=%d N=%d noise variance %.4f', index,
                config.D, config.K, config.N, synthetic.noise_variance,
            )

        await self.write_manifest(
            storage, files, dict(config.flatten()), config.seed
        )
        return sorted(files)

    async def ibp_draw(self, config: IbpDrawConfig) -> list[tuple[int, int]]:
        '''Left-ordered prior draws plus a summary of K₊ and row counts.'''
        storage = self.get_storage(config.output)
        rng = np.random.default_rng(config.seed)
        files: dict[str, str] = {}
        summary = []
        for index in range(config.draws):
            draw = sample_ibp(config.D, config.alpha, rng)
            await self.write(
                storage, files, f'draw-{index}/Z.csv',
                format_matrix(left_ordered_form(draw.Z)),
            )
            row_mean = float(draw.Z.sum(axis=1).mean())
            summary.append((index, draw.K_plus, repr(row_mean)))

        await self.write(storage, files, 'summary.csv', format_rows(
            ['draw', 'k_plus', 'row_mean'], summary
        ))
        await self.write_manifest(
            storage, files, dict(config.flatten()), config.seed
        )
        return [(index, k_plus) for index, k_plus, _ in summary]
