"""Antenna cluster geometry and transmit spatial correlation."""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.spatial.distance import pdist, squareform

from .config import Config, SystemConfig
from .errors import InvalidConfigError, ModelError
from .results import write_frame

# Eigenvalues in [-PSD_TOLERANCE, 0) are clamped to zero
PSD_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Positions of the x-pol pairs of one antenna cluster inside a square."""

    side_length: float
    carrier_freq: float
    pair_positions: np.ndarray

    def __post_init__(self):
        if self.side_length <= 0 or self.carrier_freq <= 0:
            raise InvalidConfigError("side_length and carrier_freq must be positive")

        positions = np.array(self.pair_positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 2 or len(positions) == 0:
            raise InvalidConfigError(f"pair_positions must be a non-empty (P, 2) array, got shape {positions.shape}")

        slack = 1e-12 * self.side_length
        if (positions < -slack).any() or (positions > self.side_length + slack).any():
            raise InvalidConfigError("All pair positions must lie within the square [0, side_length]^2")
        if len(positions) > 1 and pdist(positions).min() <= 0:
            raise InvalidConfigError("Pair positions must be distinct")

        positions.setflags(write=False)
        object.__setattr__(self, 'pair_positions', positions)

    @property
    def wavelength(self) -> float:
        return Config.SPEED_OF_LIGHT / self.carrier_freq

    @property
    def n_pairs(self) -> int:
        return len(self.pair_positions)

    @property
    def n_antennas(self) -> int:
        return 2 * self.n_pairs


@dataclass(frozen=True, eq=False)
class TransmitCorrelation:
    """Per-cluster transmit correlation matrix with its spectral data."""

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sqrt_matrix: np.ndarray
    is_identity: bool = False

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, tolerance: float = PSD_TOLERANCE) -> 'TransmitCorrelation':
        """Decompose a real symmetric correlation matrix.

        Eigenvalues slightly below zero (within `tolerance`) are clamped and the
        matrix rebuilt; anything more negative raises ModelError.
        """
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidConfigError(f"Correlation matrix must be square, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12):
            raise InvalidConfigError("Correlation matrix must be symmetric")
        matrix = 0.5 * (matrix + matrix.T)

        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        lowest = float(eigenvalues.min())
        if lowest < -tolerance:
            raise ModelError(f"Correlation matrix is indefinite: most negative eigenvalue {lowest:.6e}")
        if lowest < 0:
            clamped = int((eigenvalues < 0).sum())
            logger.debug(f"Clamping {clamped} eigenvalue(s) down to {lowest:.3e} to zero")
            eigenvalues = np.clip(eigenvalues, 0.0, None)
            matrix = (eigenvectors * eigenvalues) @ eigenvectors.T
            matrix = 0.5 * (matrix + matrix.T)

        sqrt_matrix = (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T
        sqrt_matrix = 0.5 * (sqrt_matrix + sqrt_matrix.T)

        for array in (matrix, eigenvalues, eigenvectors, sqrt_matrix):
            array.setflags(write=False)

        is_identity = bool(np.array_equal(matrix, np.eye(len(matrix))))
        return cls(matrix, eigenvalues, eigenvectors, sqrt_matrix, is_identity)

    @classmethod
    def identity(cls, size: int) -> 'TransmitCorrelation':
        """Uncorrelated cluster of `size` antennas."""
        if size < 1:
            raise InvalidConfigError(f"Correlation size must be >= 1, got {size}")
        eye = np.eye(size)
        eye.setflags(write=False)
        ones = np.ones(size)
        ones.setflags(write=False)
        return cls(eye, ones, eye, eye, True)

    @property
    def size(self) -> int:
        return len(self.matrix)

    @property
    def lambda_bar_sq(self) -> float:
        return lambda_bar_sq(self)


def build_geometry(m_per_cluster: int, side_length: float, carrier_freq: float) -> ArrayGeometry:
    """Place m_per_cluster/2 x-pol pairs on a uniform grid spanning the square.

    A perfect square count gives an r x r grid. Otherwise r = floor(sqrt(P))
    and c = ceil(P / r); pairs fill row-major and the final partial row is
    centred on the grid columns.
    """
    if m_per_cluster < 2 or m_per_cluster % 2:
        raise InvalidConfigError(
            f"Antennas per cluster must be a positive even number, got {m_per_cluster}"
        )

    n_pairs = m_per_cluster // 2
    rows = math.isqrt(n_pairs)
    cols = -(-n_pairs // rows)
    rows = -(-n_pairs // cols)

    def axis(count: int) -> np.ndarray:
        if count == 1:
            return np.array([side_length / 2.0])
        return np.linspace(0.0, side_length, count)

    xs, ys = axis(cols), axis(rows)
    blocks = []
    for row in range(rows):
        in_row = min(cols, n_pairs - row * cols)
        if in_row == cols:
            x = xs
        else:
            step = side_length / (cols - 1)
            x = ((cols - in_row) / 2.0 + np.arange(in_row)) * step
        blocks.append(np.column_stack([x, np.full(in_row, ys[row])]))

    return ArrayGeometry(side_length, carrier_freq, np.vstack(blocks))


def exp_correlation(a: float, d: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Exponential correlation coefficient a^(-d)."""
    if a <= 0:
        raise InvalidConfigError(f"Correlation base must be > 0, got {a}")
    distance = np.asarray(d, dtype=float)
    if (distance < 0).any():
        raise InvalidConfigError("Distances must be non-negative")
    value = np.power(float(a), -distance)
    return float(value) if value.ndim == 0 else value


def pair_distances(geometry: ArrayGeometry, unit: str = 'wavelength') -> np.ndarray:
    """Pairwise distances between x-pol pairs, in wavelengths or meters."""
    if unit not in Config.DISTANCE_UNITS:
        raise InvalidConfigError(f"Unknown distance unit {unit!r}")
    distances = squareform(pdist(geometry.pair_positions))
    if unit == 'wavelength':
        distances = distances / geometry.wavelength
    return distances


def build_Rt(geometry: ArrayGeometry, a: float, r_pol: float,
             distance_unit: str = 'wavelength') -> TransmitCorrelation:
    """Kronecker x-pol correlation matrix: block (i, j) is a^(-d_ij) * X_pol."""
    if not 0.0 <= r_pol < 1.0:
        raise InvalidConfigError(f"r_pol must lie in [0, 1), got {r_pol}")

    rho = exp_correlation(a, pair_distances(geometry, distance_unit))
    x_pol = np.array([[1.0, r_pol], [r_pol, 1.0]])
    corr = TransmitCorrelation.from_matrix(np.kron(rho, x_pol))

    logger.debug(
        f"Built R_t of size {corr.size} (a={a}, r_pol={r_pol}, unit={distance_unit}): "
        f"lambda_bar_sq={corr.lambda_bar_sq:.4f}"
    )
    return corr


def lambda_bar_sq(corr: TransmitCorrelation) -> float:
    """Average of the squared eigenvalues of R_t."""
    return float(np.mean(np.square(corr.eigenvalues)))


@lru_cache(maxsize=None)
def _identity(size: int) -> TransmitCorrelation:
    return TransmitCorrelation.identity(size)


@lru_cache(maxsize=32)
def _correlated(m_per_cluster: int, side_length: float, carrier_freq: float,
                a: float, r_pol: float, distance_unit: str) -> TransmitCorrelation:
    geometry = build_geometry(m_per_cluster, side_length, carrier_freq)
    return build_Rt(geometry, a, r_pol, distance_unit)


def correlation_for(system: SystemConfig, antennas_per_cluster: Optional[int] = None) -> TransmitCorrelation:
    """Shared (cached) per-cluster correlation for a system configuration."""
    m = antennas_per_cluster or system.antennas_per_cluster
    if not system.correlated:
        return _identity(m)
    return _correlated(m, system.side_length_m, system.carrier_freq_hz,
                       system.corr_base, system.r_pol, system.distance_unit)


def export_correlation(corr: TransmitCorrelation, matrix_path: str, eigen_path: Optional[str] = None):
    """Dump R_t (row-major) and optionally its eigenvalues as CSV."""
    write_frame(pd.DataFrame(corr.matrix), matrix_path, header=False, float_format='%.17e')
    if eigen_path:
        write_frame(pd.DataFrame({'eigenvalue': corr.eigenvalues}), eigen_path, float_format='%.17e')
