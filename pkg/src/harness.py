"""Experiment runner for the MF downlink studies."""

import os
import time
from dataclasses import asdict, dataclass
from multiprocessing import Pool
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from . import __version__
from .channel import ChannelPair, export_channel_csv
from .config import Config, ExperimentConfig, SystemConfig
from .correlation import TransmitCorrelation, build_geometry, build_Rt, correlation_for, export_correlation
from .errors import ModelError
from .linkgain import LinkGains, export_drop, limiting_profile, statistical_drop
from .mf import LimitInputs, expected_sinr, limit_sinr_all, to_db
from .results import (
    CdfSeries,
    ConvergenceRecord,
    LambdaTableRecord,
    describe_version,
    lambda_table_frame,
    records_frame,
    series_frame,
    write_frame,
    write_json,
)

CONVERGENCE_COLUMNS = ['K', 'N', 'xi', 'mean_sinr_db', 'std_sinr_db', 'limit_db']

# Relative deviation from the reference eigenvalue table that gets a warning
TABLE_DEVIATION_WARNING = 0.10


def error_percent(limit_mean: float, sinr_mean: float) -> float:
    """|mean limit - mean SINR| / mean SINR * 100."""
    if not sinr_mean > 0:
        raise ModelError(f"Mean SINR must be > 0 to form an error percentage, got {sinr_mean}")
    return abs(limit_mean - sinr_mean) / sinr_mean * 100.0


def drop_stream(seed: int, cell_index: int, drop_index: int) -> np.random.Generator:
    """Independent generator for one (cell, drop) pair, whatever process runs it."""
    return np.random.default_rng([seed, cell_index, drop_index])


def _fading_average(rng: np.random.Generator, gains: LinkGains, system: SystemConfig,
                    n_realizations: int) -> np.ndarray:
    """Per-user expected SINR (linear) averaged over fading realizations."""
    corr = correlation_for(system)
    total = np.zeros(gains.n_users)
    for _ in range(n_realizations):
        pair = ChannelPair.draw(rng, gains, corr, system.xi)
        total += expected_sinr(pair.g_hat, gains, corr, system, with_limit=False).per_user_sinr
    return total / n_realizations


def _mean_limit(system: SystemConfig, gains: LinkGains, corr: Optional[TransmitCorrelation] = None) -> float:
    inputs = LimitInputs.from_gains(system, gains, corr or correlation_for(system))
    return float(np.mean(limit_sinr_all(inputs)))


# Pool workers are module level so they pickle; each task carries its own seed triple.

def _convergence_task(task: Tuple[SystemConfig, int, int, int]) -> np.ndarray:
    system, seed, cell_index, realization = task
    rng = drop_stream(seed, cell_index, realization)
    gains = limiting_profile(system.n_users, system.beta_min, system.beta_max,
                             system.n_clusters, system.profile)
    return _fading_average(rng, gains, system, 1)


def _error_task(task: Tuple[SystemConfig, int, int, int, int, str, int]) -> float:
    system, seed, cell_index, drop_index, n_fading, virtual_limit, virtual_users = task
    rng = drop_stream(seed, cell_index, drop_index)
    _, gains = statistical_drop(rng, system)
    sinr_mean = float(np.mean(_fading_average(rng, gains, system, n_fading)))

    virtual_system = system.with_cell(n_users=virtual_users)
    if virtual_limit == 'analytic':
        # The drop's gain averages with the correlation of the virtual-size array
        limit_mean = _mean_limit(system, gains, correlation_for(virtual_system))
    else:
        # Tile the drop's users so the larger system keeps its link gain structure
        columns = np.arange(virtual_users) % gains.n_users
        virtual_gains = LinkGains(gains.beta[:, columns], gains.model)
        limit_mean = float(np.mean(_fading_average(rng, virtual_gains, virtual_system, n_fading)))

    return error_percent(limit_mean, sinr_mean)


def _mean_sinr_task(task: Tuple[SystemConfig, int, int, int, int]) -> float:
    system, seed, cell_index, drop_index, n_fading = task
    rng = drop_stream(seed, cell_index, drop_index)
    _, gains = statistical_drop(rng, system)
    return float(to_db(np.mean(_fading_average(rng, gains, system, n_fading))))


def _single_user_task(task: Tuple[SystemConfig, int, int, int, int]) -> float:
    system, seed, cell_index, drop_index, n_fading = task
    rng = drop_stream(seed, cell_index, drop_index)
    _, gains = statistical_drop(rng, system)
    # Users are re-dropped every time, so user 0 is a fresh uniformly placed user
    return float(to_db(_fading_average(rng, gains, system, n_fading)[0]))


def _lambda_task(task: Tuple[str, int, float, int, SystemConfig]) -> LambdaTableRecord:
    unit, n_clusters, r_pol, table_antennas, system = task
    geometry = build_geometry(table_antennas // n_clusters, system.side_length_m, system.carrier_freq_hz)
    value = build_Rt(geometry, system.corr_base, r_pol, unit).lambda_bar_sq

    reference = Config.REFERENCE_LAMBDA_TABLE.get(n_clusters, {}).get(r_pol)
    deviation = None if reference is None else (value - reference) / reference
    return LambdaTableRecord(unit, n_clusters, r_pol, value, reference, deviation)


@dataclass
class RunSummary:
    """Outcome of one experiment run."""
    experiment: str
    output_path: str
    metadata_path: str
    rows: int
    wall_time: float
    headline: str = ''

    def line(self) -> str:
        return (f"{self.experiment}: {self.rows} rows -> {self.output_path} "
                f"({self.wall_time:.1f}s){' | ' + self.headline if self.headline else ''}")


class ExperimentRunner:
    """Runs one configured experiment over a deterministic worker pool."""

    def __init__(self, config: ExperimentConfig):
        self.config = config.validate()
        self.workers = Config.worker_count(config.threads)

    def _map(self, fn: Callable[[Any], Any], tasks: Sequence[Any]) -> List[Any]:
        """Ordered map over tasks; results do not depend on the worker count."""
        if self.workers == 1 or len(tasks) <= 1:
            return [fn(task) for task in tasks]
        processes = min(self.workers, len(tasks))
        chunksize = max(1, len(tasks) // (4 * processes))
        with Pool(processes) as pool:
            return pool.map(fn, tasks, chunksize=chunksize)

    @property
    def _system(self) -> SystemConfig:
        return self.config.system

    def convergence(self) -> List[ConvergenceRecord]:
        """Mean per-user SINR with spread and analytic limit for every (K, N, xi)."""
        cfg = self.config
        records = []
        cell_index = 0
        for k in cfg.k_values:
            for n in cfg.n_values:
                for xi in cfg.xi_values:
                    system = self._system.with_cell(link_model='limiting', n_users=k, n_clusters=n, xi=xi)
                    tasks = [(system, cfg.seed, cell_index, r) for r in range(cfg.fading_realizations)]
                    # realizations x users
                    sinr = np.vstack(self._map(_convergence_task, tasks))

                    gains = limiting_profile(k, system.beta_min, system.beta_max, n, system.profile)
                    record = ConvergenceRecord(
                        K=k, N=n, xi=xi,
                        mean_sinr_db=float(to_db(sinr.mean())),
                        std_sinr_db=float(np.mean(np.std(to_db(sinr), axis=0))),
                        limit_db=float(to_db(_mean_limit(system, gains))),
                    )
                    logger.info(
                        f"K={k} N={n} xi={xi}: mean {record.mean_sinr_db:.2f} dB, "
                        f"limit {record.limit_db:.2f} dB"
                    )
                    records.append(record)
                    cell_index += 1
        return records

    def error_cdf(self) -> List[CdfSeries]:
        """Error-% CDF over drops for every (correlation, K, N) cell."""
        cfg = self.config
        series = []
        cell_index = 0
        for correlated in cfg.correlations:
            for k in cfg.k_values:
                for n in cfg.n_values:
                    system = self._system.with_cell(link_model='statistical', n_users=k,
                                                    n_clusters=n, correlated=correlated)
                    tasks = [
                        (system, cfg.seed, cell_index, d, cfg.fading_realizations,
                         cfg.virtual_limit, cfg.virtual_users)
                        for d in range(cfg.n_drops)
                    ]
                    cdf = CdfSeries.from_samples(self._map(_error_task, tasks),
                                                 correlated=correlated, K=k, N=n)
                    logger.info(f"correlated={correlated} K={k} N={n}: median error {cdf.median:.1f}%")
                    series.append(cdf)
                    cell_index += 1
        return series

    def shadow_sweep(self) -> List[CdfSeries]:
        """Mean per-user SINR CDF for every shadowing standard deviation."""
        cfg = self.config
        series = []
        for cell_index, sigma in enumerate(cfg.shadow_values):
            system = self._system.with_cell(link_model='statistical', shadow_sigma_db=sigma)
            tasks = [(system, cfg.seed, cell_index, d, cfg.fading_realizations) for d in range(cfg.n_drops)]
            cdf = CdfSeries.from_samples(self._map(_mean_sinr_task, tasks), shadow_sigma_db=sigma,
                                         K=system.n_users, N=system.n_clusters, xi=system.xi)
            logger.info(f"sigma_shadow={sigma} dB: median {cdf.median:.2f} dB")
            series.append(cdf)
        return series

    def sinr_cdf(self, mode: Optional[str] = None) -> List[CdfSeries]:
        """Mean-user or single-user SINR CDF over drops for every (correlation, N, xi)."""
        cfg = self.config
        mode = mode or cfg.cdf_mode
        worker = _single_user_task if mode == 'single_user' else _mean_sinr_task
        series = []
        cell_index = 0
        for correlated in cfg.correlations:
            for n in cfg.n_values:
                for xi in cfg.xi_values:
                    system = self._system.with_cell(link_model='statistical', n_clusters=n,
                                                    xi=xi, correlated=correlated)
                    tasks = [(system, cfg.seed, cell_index, d, cfg.fading_realizations)
                             for d in range(cfg.n_drops)]
                    cdf = CdfSeries.from_samples(self._map(worker, tasks), mode=mode, correlated=correlated,
                                                 K=system.n_users, N=n, xi=xi)
                    logger.info(f"{mode} correlated={correlated} N={n} xi={xi}: median {cdf.median:.2f} dB")
                    series.append(cdf)
                    cell_index += 1
        return series

    def lambda_table(self) -> List[LambdaTableRecord]:
        """Average squared eigenvalue of R_t over (distance unit, N, r_pol)."""
        cfg = self.config
        tasks = [
            (unit, n, r_pol, cfg.table_antennas, self._system)
            for unit in cfg.distance_units
            for n in cfg.n_values
            for r_pol in cfg.r_pol_values
        ]
        records = self._map(_lambda_task, tasks)

        for record in records:
            if record.rel_deviation is not None and abs(record.rel_deviation) > TABLE_DEVIATION_WARNING:
                logger.warning(
                    f"Lambda table ({record.distance_unit}) N={record.N} r_pol={record.r_pol}: "
                    f"{record.lambda_bar_sq:.3f} vs reference {record.reference} "
                    f"({100 * record.rel_deviation:+.1f}%)"
                )
        _check_table_orderings(records)
        return records

    def export_samples(self, directory: str) -> List[str]:
        """Write one drop, its R_t and one channel draw for the first cell as CSV files."""
        cfg = self.config
        k, n = (cfg.grid() or ((self._system.n_users, self._system.n_clusters),))[0]
        correlated = cfg.correlations[-1]
        system = self._system.with_cell(link_model='statistical', n_users=k, n_clusters=n, correlated=correlated)

        rng = drop_stream(cfg.seed, 0, 0)
        layout, gains = statistical_drop(rng, system)
        corr = correlation_for(system)
        pair = ChannelPair.draw(rng, gains, corr, system.xi)

        os.makedirs(directory, exist_ok=True)
        paths = [os.path.join(directory, name) for name in
                 ('drop.csv', 'rt.csv', 'rt_eigenvalues.csv', 'g.csv', 'g_hat.csv')]
        export_drop(layout, gains, paths[0])
        export_correlation(corr, paths[1], paths[2])
        export_channel_csv(pair.g, paths[3])
        export_channel_csv(pair.g_hat, paths[4])
        logger.info(f"Exported K={k} N={n} correlated={correlated} samples to {directory}")
        return paths

    def run(self) -> RunSummary:
        """Run the configured experiment and write its CSV and JSON sidecar."""
        cfg = self.config
        logger.info(f"Starting {cfg.experiment} (seed={cfg.seed}, workers={self.workers})")
        start = time.perf_counter()
        extra = {}

        if cfg.experiment == 'convergence':
            records = self.convergence()
            frame = records_frame(records)[CONVERGENCE_COLUMNS]
            headline = f"K={records[-1].K} N={records[-1].N} xi={records[-1].xi}: " \
                       f"{records[-1].mean_sinr_db:.2f} dB vs limit {records[-1].limit_db:.2f} dB"
        elif cfg.experiment == 'lambda_table':
            records = self.lambda_table()
            frame = lambda_table_frame(records)
            extra['reference_deviation'] = [asdict(record) for record in records]
            headline = f"{len(records)} table entries"
        else:
            if cfg.experiment == 'error_cdf':
                series = self.error_cdf()
            elif cfg.experiment == 'shadow_sweep':
                series = self.shadow_sweep()
            else:
                series = self.sinr_cdf()
            frame = series_frame(series)
            headline = "medians " + ", ".join(f"{s.median:.2f}" for s in series)

        wall_time = time.perf_counter() - start
        output_path = cfg.resolved_output_path
        write_frame(frame, output_path)

        metadata_path = _metadata_path(output_path)
        write_json({
            'config': cfg.to_dict(),
            'seed': cfg.seed,
            'version': describe_version(__version__),
            'wall_time': wall_time,
            'workers': self.workers,
            'rows': len(frame),
            **extra,
        }, metadata_path)

        summary = RunSummary(cfg.experiment, output_path, metadata_path, len(frame), wall_time, headline)
        logger.info(f"Finished {summary.line()}")
        return summary


def _metadata_path(output_path: str) -> str:
    stem = output_path[:-4] if output_path.lower().endswith('.csv') else output_path
    return f"{stem}.json"


def _check_table_orderings(records: List[LambdaTableRecord]):
    frame = pd.DataFrame([{'unit': r.distance_unit, 'N': r.N, 'r_pol': r.r_pol, 'value': r.lambda_bar_sq}
                          for r in records])
    for unit, block in frame.groupby('unit'):
        table = block.pivot(index='N', columns='r_pol', values='value').sort_index().sort_index(axis=1)
        if not (np.diff(table.values, axis=1) > 0).all():
            logger.warning(f"Lambda table ({unit}) is not strictly increasing in r_pol")
        if not (np.diff(table.values, axis=0) < 0).all():
            logger.warning(f"Lambda table ({unit}) is not strictly decreasing in N")


def run_convergence(config: ExperimentConfig) -> List[ConvergenceRecord]:
    return ExperimentRunner(config).convergence()


def run_error_cdf(config: ExperimentConfig) -> List[CdfSeries]:
    return ExperimentRunner(config).error_cdf()


def run_shadow_sweep(config: ExperimentConfig) -> List[CdfSeries]:
    return ExperimentRunner(config).shadow_sweep()


def run_sinr_cdf(config: ExperimentConfig, mode: Optional[str] = None) -> List[CdfSeries]:
    return ExperimentRunner(config).sinr_cdf(mode)


def run_lambda_table(config: ExperimentConfig) -> List[LambdaTableRecord]:
    return ExperimentRunner(config).lambda_table()


def run_experiment(config: ExperimentConfig) -> RunSummary:
    return ExperimentRunner(config).run()
