"""Matched-filter precoding: expected SINR, a downlink oracle and SINR limits."""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .channel import cluster_quadratic_forms, complex_normal, sample_channel
from .config import SystemConfig
from .correlation import TransmitCorrelation
from .errors import DegenerateChannelError, InvalidConfigError, ModelError
from .linkgain import BetaAverages, LinkGains, beta_averages

# Upper bound on complex entries held per oracle batch
_BATCH_ENTRIES = 4_000_000


def to_db(value):
    return 10.0 * np.log10(value)


class LimitCase(str, Enum):
    PERFECT_CSI = 'perfect_csi'
    NO_CORR = 'no_corr'
    EQUAL_POWER_CORR = 'equal_power_corr'
    NO_CORR_EQUAL_POWER = 'no_corr_equal_power'
    NO_CORR_EQUAL_POWER_PERFECT_CSI = 'no_corr_equal_power_perfect_csi'


@dataclass(frozen=True, eq=False)
class LimitInputs:
    """Everything the asymptotic SINR expression depends on."""

    rho_f: float
    alpha: float
    xi: float
    lambda_bar_sq: float
    averages: BetaAverages
    noise_power: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.rho_f <= 0 or self.noise_power <= 0:
            raise InvalidConfigError("alpha, rho_f and noise_power must all be > 0")
        if not 0.0 <= self.xi <= 1.0:
            raise InvalidConfigError(f"xi must lie in [0, 1], got {self.xi}")

    @classmethod
    def from_gains(cls, config: SystemConfig, gains: LinkGains, corr: TransmitCorrelation,
                   alpha: Optional[float] = None) -> 'LimitInputs':
        return cls(
            rho_f=config.rho_f,
            alpha=config.alpha if alpha is None else alpha,
            xi=config.xi,
            lambda_bar_sq=corr.lambda_bar_sq,
            averages=beta_averages(gains),
            noise_power=config.noise_power,
        )

    def with_changes(self, **changes: Any) -> 'LimitInputs':
        return replace(self, **changes)


@dataclass
class SinrReport:
    """Per-user expected SINR of one channel realization, with its limit."""

    per_user_sinr: np.ndarray
    gamma: float
    per_user_limit: Optional[np.ndarray] = None
    signal_power: Optional[np.ndarray] = None
    interference_power: Optional[np.ndarray] = None

    @property
    def mean_sinr(self) -> float:
        return float(np.mean(self.per_user_sinr))

    @property
    def mean_sinr_db(self) -> float:
        """Mean per-user SINR (averaged in linear scale) in dB."""
        return float(to_db(self.mean_sinr))

    @property
    def std_sinr_db(self) -> float:
        """Spread of the per-user SINRs in dB."""
        return float(np.std(to_db(self.per_user_sinr)))

    @property
    def mean_limit(self) -> Optional[float]:
        return None if self.per_user_limit is None else float(np.mean(self.per_user_limit))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            'user_id': np.arange(len(self.per_user_sinr)),
            'sinr_db': to_db(self.per_user_sinr),
        })
        if self.per_user_limit is not None:
            frame['limit_db'] = to_db(self.per_user_limit)
        return frame

    def to_json(self) -> Dict[str, Any]:
        data = {
            'per_user_sinr': self.per_user_sinr.tolist(),
            'gamma': self.gamma,
            'mean_sinr_db': self.mean_sinr_db,
            'std_sinr_db': self.std_sinr_db,
        }
        if self.per_user_limit is not None:
            data['per_user_limit'] = self.per_user_limit.tolist()
        return data


@dataclass(frozen=True)
class DownlinkEstimate:
    """Monte Carlo received powers per user."""

    signal_power: np.ndarray
    interference_power: np.ndarray
    noise_power: np.ndarray
    n_draws: int


def gamma_norm(g_hat: np.ndarray) -> float:
    """Power normalization tr(G_hat^T G_hat^*) / K."""
    if g_hat.ndim != 2 or g_hat.shape[1] < 1:
        raise InvalidConfigError(f"CSI matrix must be M x K with K >= 1, got shape {g_hat.shape}")
    gamma = float(np.sum(np.abs(g_hat) ** 2) / g_hat.shape[1])
    if not gamma > 0:
        raise DegenerateChannelError("CSI matrix is all zeros; MF power normalization is undefined")
    return gamma


def mf_powers(g_hat: np.ndarray, gains: LinkGains, corr: TransmitCorrelation,
              rho_f: float, xi: float, noise_power: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """Expected signal and interference-plus-noise powers of every user given G_hat.

    Returns (signal, interference_plus_noise, gamma).
    """
    gamma = gamma_norm(g_hat)
    k = g_hat.shape[1]

    gram = g_hat.T @ g_hat.conj()
    terms = xi ** 2 * np.abs(gram) ** 2
    if xi < 1.0:
        # forms[i, k] = g_hat_k^T P_i g_hat_k^*
        forms = gains.beta.T @ cluster_quadratic_forms(g_hat, corr, gains.n_clusters)
        terms = terms + (1.0 - xi ** 2) * forms

    scale = rho_f / (k * gamma)
    signal = scale * np.diag(terms).copy()
    off_diagonal = np.where(np.eye(k, dtype=bool), 0.0, terms)
    interference = scale * off_diagonal.sum(axis=1) + noise_power
    return signal, interference, gamma


def expected_sinr(g_hat: np.ndarray, gains: LinkGains, corr: TransmitCorrelation,
                  config: SystemConfig, with_limit: bool = True) -> SinrReport:
    """Expected MF SINR per user as the ratio of expected powers."""
    m, k = g_hat.shape
    if m != gains.n_clusters * corr.size or k != gains.n_users:
        raise InvalidConfigError(
            f"CSI matrix {g_hat.shape} does not match N={gains.n_clusters}, "
            f"M/N={corr.size}, K={gains.n_users}"
        )

    signal, interference, gamma = mf_powers(g_hat, gains, corr, config.rho_f, config.xi, config.noise_power)

    limit = None
    if with_limit:
        inputs = LimitInputs.from_gains(config, gains, corr, alpha=m / k)
        limit = limit_sinr_all(inputs)

    return SinrReport(signal / interference, gamma, limit, signal, interference)


def received_signal(g: np.ndarray, g_hat: np.ndarray, q: np.ndarray, w: np.ndarray,
                    rho_f: float) -> np.ndarray:
    """Received vector sqrt(rho_f / gamma) * G^T G_hat^* q + w."""
    gamma = gamma_norm(g_hat)
    return np.sqrt(rho_f / gamma) * (g.T @ (g_hat.conj() @ q)) + w


def simulate_downlink(rng: np.random.Generator, g: np.ndarray, g_hat: np.ndarray,
                      config: SystemConfig, n_draws: int,
                      gains: Optional[LinkGains] = None,
                      corr: Optional[TransmitCorrelation] = None) -> DownlinkEstimate:
    """Monte Carlo estimate of the received signal and interference-plus-noise powers.

    Symbols q are CN(0, 1/K) per entry and noise is CN(0, sigma^2). When gains
    and corr are given and xi < 1, the true channel is redrawn every draw from
    its law given the estimate, xi * G_hat + sqrt(1 - xi^2) * E, so the averages
    match the closed-form expectations; otherwise `g` is held fixed.
    """
    if n_draws < 1:
        raise InvalidConfigError(f"n_draws must be >= 1, got {n_draws}")
    if (gains is None) != (corr is None):
        raise InvalidConfigError("gains and corr must be given together")

    m, k = g_hat.shape
    xi = config.xi
    redraw = gains is not None and xi < 1.0
    amplitude = np.sqrt(config.rho_f / gamma_norm(g_hat))
    estimate_gram = g_hat.T @ g_hat.conj()
    fixed = g.T @ g_hat.conj()

    batch_size = max(1, _BATCH_ENTRIES // (m * k + k * k))
    signal = np.zeros(k)
    interference = np.zeros(k)
    noise = np.zeros(k)

    done = 0
    while done < n_draws:
        b = min(batch_size, n_draws - done)
        if redraw:
            e = sample_channel(rng, gains, corr, size=b)
            h = xi * estimate_gram + np.sqrt(1.0 - xi ** 2) * (np.swapaxes(e, 1, 2) @ g_hat.conj())
        else:
            h = fixed[None, :, :]

        q = complex_normal(rng, (b, k)) / np.sqrt(k)
        w = np.sqrt(config.noise_power) * complex_normal(rng, (b, k))

        contributions = amplitude * h * q[:, None, :]
        desired = np.diagonal(contributions, axis1=1, axis2=2)
        undesired = contributions.sum(axis=2) - desired + w

        signal += np.sum(np.abs(desired) ** 2, axis=0)
        interference += np.sum(np.abs(undesired) ** 2, axis=0)
        noise += np.sum(np.abs(w) ** 2, axis=0)
        done += b

    logger.debug(f"Simulated {n_draws} downlink draws for K={k}, M={m}, xi={xi}")
    return DownlinkEstimate(signal / n_draws, interference / n_draws, noise / n_draws, n_draws)


def limit_sinr_all(inputs: LimitInputs) -> np.ndarray:
    """Asymptotic SINR of every user.

    rho_f alpha xi^2 beta_i^2 / (sigma^2 beta_bar + rho_f beta_ik lambda_bar_sq)
    """
    a = inputs.averages
    if not a.beta_bar > 0:
        raise ModelError(f"Invalid gains: beta_bar must be > 0, got {a.beta_bar}")

    numerator = inputs.rho_f * inputs.alpha * inputs.xi ** 2 * np.square(a.beta_bar_i)
    denominator = inputs.noise_power * a.beta_bar + inputs.rho_f * a.beta_ik_bar * inputs.lambda_bar_sq
    return numerator / denominator


def limit_sinr(inputs: LimitInputs, user: int) -> float:
    return float(limit_sinr_all(inputs)[user])


def sinr_ceiling(inputs: LimitInputs, user: int) -> float:
    """Limit as rho_f grows without bound: alpha xi^2 beta_i^2 / (beta_ik lambda_bar_sq)."""
    a = inputs.averages
    cross = a.beta_ik_bar[user] * inputs.lambda_bar_sq
    if cross == 0:
        return float('inf')
    return float(inputs.alpha * inputs.xi ** 2 * a.beta_bar_i[user] ** 2 / cross)


def _common_gain(averages: BetaAverages) -> float:
    beta = averages.beta_bar
    constant = (
        np.allclose(averages.beta_bar_i, beta, rtol=1e-12, atol=0.0)
        and np.allclose(averages.beta_sq_bar_i, beta ** 2, rtol=1e-12, atol=0.0)
    )
    if not constant:
        raise InvalidConfigError("Equal-power limit requires the same link gain on every link")
    return beta


def limit_sinr_special(case, inputs: LimitInputs, user: int = 0) -> float:
    """Closed-form limit under one of the parameter restrictions."""
    case = LimitCase(case)
    a = inputs.averages
    rho, alpha, xi = inputs.rho_f, inputs.alpha, inputs.xi
    lam, sigma2 = inputs.lambda_bar_sq, inputs.noise_power

    if case is LimitCase.PERFECT_CSI:
        bi, bik = a.beta_bar_i[user], a.beta_ik_bar[user]
        return float(rho * alpha * bi ** 2 / (sigma2 * a.beta_bar + rho * bik * lam))
    if case is LimitCase.NO_CORR:
        bi, bik = a.beta_bar_i[user], a.beta_ik_bar[user]
        return float(rho * alpha * xi ** 2 * bi ** 2 / (sigma2 * a.beta_bar + rho * bik))

    beta = _common_gain(a)
    if case is LimitCase.EQUAL_POWER_CORR:
        return float(rho * alpha * xi ** 2 * beta / (sigma2 + rho * beta * lam))
    if case is LimitCase.NO_CORR_EQUAL_POWER:
        return float(rho * alpha * xi ** 2 * beta / (sigma2 + rho * beta))
    return float(rho * alpha * beta / (sigma2 + rho * beta))
