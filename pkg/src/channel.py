"""Correlated downlink channel synthesis and the imperfect-CSI model."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import block_diag

from .correlation import TransmitCorrelation
from .errors import InvalidConfigError
from .linkgain import LinkGains
from .results import write_frame


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular CN(0, 1) samples: real and imaginary parts each N(0, 1/2)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _check_dimensions(gains: LinkGains, corr: TransmitCorrelation, n_antennas: Optional[int] = None):
    if n_antennas is not None and n_antennas != gains.n_clusters * corr.size:
        raise InvalidConfigError(
            f"Channel has {n_antennas} antennas but N x M/N = {gains.n_clusters} x {corr.size}"
        )


def sample_channel(rng: np.random.Generator, gains: LinkGains, corr: TransmitCorrelation,
                   size: Optional[int] = None) -> np.ndarray:
    """Draw G (M x K) with block (n, k) = sqrt(beta[n, k]) * R_t^(1/2) * H[n, k].

    With `size`, returns a stack of independent draws of shape (size, M, K).
    """
    n, k = gains.beta.shape
    m = corr.size
    batch = () if size is None else (size,)
    h = complex_normal(rng, batch + (n, m, k))

    if not corr.is_identity:
        h = corr.sqrt_matrix @ h

    blocks = h * np.sqrt(gains.beta)[:, None, :]
    return blocks.reshape(batch + (n * m, k))


def apply_imperfect_csi(rng: np.random.Generator, g: np.ndarray, xi: float,
                        gains: LinkGains, corr: TransmitCorrelation) -> np.ndarray:
    """CSI estimate xi * G + sqrt(1 - xi^2) * E with E a fresh channel draw."""
    if not 0.0 <= xi <= 1.0:
        raise InvalidConfigError(f"xi must lie in [0, 1], got {xi}")
    _check_dimensions(gains, corr, g.shape[-2])

    if xi == 1.0:
        return g.copy()
    size = g.shape[0] if g.ndim == 3 else None
    e = sample_channel(rng, gains, corr, size=size)
    return xi * g + np.sqrt(1.0 - xi ** 2) * e


@dataclass(frozen=True, eq=False)
class ChannelPair:
    """True channel and its CSI estimate for one fading realization."""

    g: np.ndarray
    g_hat: np.ndarray
    xi: float

    @classmethod
    def draw(cls, rng: np.random.Generator, gains: LinkGains, corr: TransmitCorrelation,
             xi: float) -> 'ChannelPair':
        g = sample_channel(rng, gains, corr)
        g_hat = apply_imperfect_csi(rng, g, xi, gains, corr)
        g.setflags(write=False)
        g_hat.setflags(write=False)
        return cls(g, g_hat, xi)


@dataclass(frozen=True, eq=False)
class UserGainSpectrum:
    """Block-diagonal P_i kept implicitly as per-cluster gains plus the shared R_t."""

    user: int
    cluster_gains: np.ndarray
    corr: TransmitCorrelation

    @property
    def q_eigenvalues(self) -> np.ndarray:
        return np.concatenate([b * self.corr.eigenvalues for b in self.cluster_gains])

    @property
    def n_antennas(self) -> int:
        return len(self.cluster_gains) * self.corr.size

    @property
    def trace(self) -> float:
        return float(self.corr.size * self.cluster_gains.sum())

    def materialize(self) -> np.ndarray:
        """Dense M x M matrix P_i (only for small systems and tests)."""
        return block_diag(*[b * self.corr.matrix for b in self.cluster_gains])


def user_gain_spectrum(user: int, gains: LinkGains, corr: TransmitCorrelation) -> UserGainSpectrum:
    if not 0 <= user < gains.n_users:
        raise InvalidConfigError(f"User index {user} outside 0..{gains.n_users - 1}")
    return UserGainSpectrum(user, gains.beta[:, user].copy(), corr)


def quadratic_form_limit_check(rng: np.random.Generator, spectrum: UserGainSpectrum,
                               n_antennas: Optional[int] = None,
                               n_draws: Optional[int] = None):
    """(1/M) v^T P_i v* for fresh CN(0, 1) vectors v, evaluated in the eigenbasis of P_i."""
    q = spectrum.q_eigenvalues
    m = len(q)
    if n_antennas is not None and n_antennas != m:
        raise InvalidConfigError(f"Spectrum has {m} eigenvalues, expected M = {n_antennas}")

    shape = (m,) if n_draws is None else (n_draws, m)
    v = complex_normal(rng, shape)
    values = (np.abs(v) ** 2 * q).sum(axis=-1) / m
    return float(values) if n_draws is None else values


def cluster_quadratic_forms(x: np.ndarray, corr: TransmitCorrelation, n_clusters: int) -> np.ndarray:
    """C[n, k] = x_nk^H R_t x_nk for each cluster segment x_nk of column k.

    With per-cluster gains, x_k^H P_i x_k = sum_n beta[n, i] * C[n, k].
    """
    m, k = x.shape
    if m != n_clusters * corr.size:
        raise InvalidConfigError(f"Matrix has {m} rows but N x M/N = {n_clusters} x {corr.size}")

    segments = x.reshape(n_clusters, corr.size, k)
    if corr.is_identity:
        return np.sum(np.abs(segments) ** 2, axis=1)
    shaped = corr.matrix @ segments
    return np.real(np.sum(segments.conj() * shaped, axis=1))


def export_channel_csv(g: np.ndarray, path: str) -> str:
    """Dump a complex matrix as CSV with "re,im" cells."""
    cells = [[f"{z.real:.17e},{z.imag:.17e}" for z in row] for row in np.asarray(g)]
    frame = pd.DataFrame(cells)
    logger.debug(f"Exporting {g.shape[0]}x{g.shape[1]} channel matrix")
    return write_frame(frame, path, header=False)
