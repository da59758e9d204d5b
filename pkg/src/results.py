"""Result records, empirical CDFs and atomic persistence."""

import json
import os
import subprocess
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional

import numpy as np
import pandas as pd
from loguru import logger


@dataclass
class ConvergenceRecord:
    """Mean per-user SINR against its limit for one (K, N, xi) cell."""
    K: int = 0
    N: int = 0
    xi: float = 1.0
    mean_sinr_db: float = 0.0
    std_sinr_db: float = 0.0
    limit_db: float = 0.0


@dataclass
class LambdaTableRecord:
    """One entry of the average squared eigenvalue table."""
    distance_unit: str = 'wavelength'
    N: int = 0
    r_pol: float = 0.0
    lambda_bar_sq: float = 0.0
    reference: Optional[float] = None
    rel_deviation: Optional[float] = None


@dataclass
class CdfSeries:
    """Empirical CDF of one labelled sample set."""
    values: np.ndarray
    probabilities: np.ndarray
    labels: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: Iterable[float], **labels: Any) -> 'CdfSeries':
        values = np.sort(np.asarray(list(samples), dtype=float))
        if len(values) == 0:
            raise ValueError("Cannot build a CDF from an empty sample")
        probabilities = np.arange(1, len(values) + 1) / len(values)
        return cls(values, probabilities, dict(labels))

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.values, q))

    def is_valid(self) -> bool:
        return bool(
            np.all(np.diff(self.values) >= 0)
            and np.all(np.diff(self.probabilities) >= 0)
            and self.probabilities[0] > 0
            and self.probabilities[-1] == 1.0
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'value': self.values, 'probability': self.probabilities})
        for position, (key, value) in enumerate(self.labels.items()):
            frame.insert(position, key, value)
        return frame


def series_frame(series: List[CdfSeries]) -> pd.DataFrame:
    """Stack several CDF series into one long table."""
    return pd.concat([s.to_frame() for s in series], ignore_index=True)


def records_frame(records: Iterable[Any]) -> pd.DataFrame:
    return pd.DataFrame([asdict(record) for record in records])


def lambda_table_frame(records: Iterable[LambdaTableRecord]) -> pd.DataFrame:
    """Wide table: one row per (distance unit, N), one column per r_pol."""
    long = records_frame(records)
    wide = long.pivot_table(index=['distance_unit', 'N'], columns='r_pol', values='lambda_bar_sq', sort=False)
    wide.columns = [f"{r_pol:g}" for r_pol in wide.columns]
    return wide.reset_index()


def describe_version(fallback: str) -> str:
    """`git describe` of the source tree, or `fallback` outside a checkout."""
    try:
        p = subprocess.run(
            ['git', 'describe', '--tags', '--always', '--dirty'],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            check=False,
            text=True,
        )
    except OSError:
        return fallback
    described = (p.stdout or '').strip()
    return described if p.returncode == 0 and described else fallback


@contextmanager
def atomic_output(path: str) -> Iterator[str]:
    """Yield a temporary path that replaces `path` only if the block succeeds."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=f".{os.path.basename(path)}.", suffix='.tmp')
    os.close(fd)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_frame(frame: pd.DataFrame, path: str, **kwargs: Any) -> str:
    """Write a DataFrame as CSV atomically."""
    kwargs.setdefault('index', False)
    with atomic_output(path) as tmp_path:
        frame.to_csv(tmp_path, **kwargs)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(data: Dict[str, Any], path: str) -> str:
    """Write a JSON document atomically."""
    with atomic_output(path) as tmp_path:
        with open(tmp_path, 'w', encoding='utf-8') as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write('\n')
    logger.debug(f"Wrote metadata to {path}")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
