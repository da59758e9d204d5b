"""Large-scale link gain models: random cell drops and limiting profiles."""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .config import SystemConfig
from .errors import InvalidConfigError, ModelError, UnsupportedConfigError
from .results import write_frame

MAX_RESAMPLE_ROUNDS = 10_000


@dataclass(frozen=True, eq=False)
class LinkGains:
    """N x K matrix of linear link gains beta[n, k]."""

    beta: np.ndarray
    model: str = 'statistical'
    profile: Optional[int] = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 2 or beta.size == 0:
            raise ModelError(f"Link gains must be a non-empty N x K matrix, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0):
            raise ModelError("Link gains must be strictly positive and finite")
        beta.setflags(write=False)
        object.__setattr__(self, 'beta', beta)

    @property
    def n_clusters(self) -> int:
        return self.beta.shape[0]

    @property
    def n_users(self) -> int:
        return self.beta.shape[1]

    @property
    def model_tag(self) -> str:
        return self.model if self.profile is None else f"{self.model}({self.profile})"

    def scaled(self, factor: float) -> 'LinkGains':
        return LinkGains(self.beta * factor, self.model, self.profile)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {'cluster': n, 'user': k, 'beta': self.beta[n, k]}
            for n in range(self.n_clusters)
            for k in range(self.n_users)
        ]
        return pd.DataFrame(rows)


@dataclass(frozen=True, eq=False)
class DropLayout:
    """Geometry of one random drop: BS sites, users and per-link distances."""

    bs_positions: np.ndarray
    user_positions: np.ndarray
    distances: np.ndarray
    shadowing_db: np.ndarray
    region_radius: float
    d_min: float
    d_max: float

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for n, (bx, by) in enumerate(self.bs_positions):
            for k, (ux, uy) in enumerate(self.user_positions):
                rows.append({
                    'cluster': n, 'user': k,
                    'bs_x': bx, 'bs_y': by, 'user_x': ux, 'user_y': uy,
                    'distance_m': self.distances[n, k],
                    'shadowing_db': self.shadowing_db[n, k],
                })
        return pd.DataFrame(rows)


@dataclass(frozen=True, eq=False)
class BetaAverages:
    """Link gain averages entering the SINR limit."""

    beta_bar_i: np.ndarray
    beta_sq_bar_i: np.ndarray
    beta_bar: float
    beta_ik_bar: np.ndarray


def bs_positions(n_clusters: int, radius: float) -> np.ndarray:
    """One BS at the centre, or N BSs equidistant on the periphery (BS n at angle 2*pi*n/N)."""
    if n_clusters == 1:
        return np.zeros((1, 2))
    angles = 2.0 * np.pi * np.arange(n_clusters) / n_clusters
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _uniform_disc(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    theta = 2.0 * np.pi * rng.random(count)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _link_distances(bs: np.ndarray, users: np.ndarray) -> np.ndarray:
    return np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=2)


def statistical_drop(rng: np.random.Generator, config: SystemConfig) -> Tuple[DropLayout, LinkGains]:
    """Random drop with log-normal shadowing and distance path-loss.

    Users falling closer than d_min to any BS are redrawn; link distances
    beyond d_max are clipped to d_max. Gains are scaled so the strongest
    link equals beta_max.
    """
    if config.d_max_m <= config.d_min_m:
        raise InvalidConfigError(f"d_max_m ({config.d_max_m}) must exceed d_min_m ({config.d_min_m})")

    n, k = config.n_clusters, config.n_users
    bs = bs_positions(n, config.region_radius_m)
    users = _uniform_disc(rng, k, config.region_radius_m)

    resampled = 0
    for _ in range(MAX_RESAMPLE_ROUNDS):
        too_close = (_link_distances(bs, users) < config.d_min_m).any(axis=0)
        if not too_close.any():
            break
        resampled += int(too_close.sum())
        users[too_close] = _uniform_disc(rng, int(too_close.sum()), config.region_radius_m)
    else:
        raise ModelError(
            f"Could not place users at least {config.d_min_m} m from every BS "
            f"(N={n}, radius={config.region_radius_m})"
        )

    distances = np.clip(_link_distances(bs, users), config.d_min_m, config.d_max_m)
    shadowing_db = rng.normal(0.0, config.shadow_sigma_db, size=(n, k))
    raw = np.power(10.0, shadowing_db / 10.0) * np.power(distances, -config.pathloss_exponent)

    # Dividing by the maximum first keeps the strongest link at exactly beta_max
    beta = config.beta_max * (raw / raw.max())

    if resampled:
        logger.debug(f"Resampled {resampled} user position(s) violating d_min")

    layout = DropLayout(bs, users, distances, shadowing_db, config.region_radius_m,
                        config.d_min_m, config.d_max_m)
    return layout, LinkGains(beta, 'statistical')


def profile_gain(x, beta_min: float, beta_max: float):
    """Exponential link gain profile beta(x) = beta_max * (beta_min / beta_max)^x."""
    return beta_max * np.power(beta_min / beta_max, x)


def limiting_profile(n_users: int, beta_min: float, beta_max: float,
                     n_clusters: int = 1, profile: int = 1) -> LinkGains:
    """Deterministic gains beta((2k - 1) / 2K) with BS2's row arranged by profile.

    Profile 1 repeats BS1's row, profile 2 reverses it and profile 3 rotates it
    by ceil(K/2) so BS1's median users get the top gains at BS2.
    """
    if not 0 < beta_min <= beta_max:
        raise InvalidConfigError(f"Need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}")
    if n_clusters > 2:
        raise UnsupportedConfigError(
            f"The limiting link gain model supports at most 2 clusters, got N={n_clusters}"
        )
    if profile not in (1, 2, 3):
        raise InvalidConfigError(f"profile must be 1, 2 or 3, got {profile}")
    if n_users < 1:
        raise InvalidConfigError(f"n_users must be >= 1, got {n_users}")

    x = (2.0 * np.arange(1, n_users + 1) - 1.0) / (2.0 * n_users)
    row1 = profile_gain(x, beta_min, beta_max)
    if n_clusters == 1:
        return LinkGains(row1[None, :], 'limiting', profile)

    if profile == 1:
        row2 = row1.copy()
    elif profile == 2:
        row2 = row1[::-1].copy()
    else:
        row2 = np.roll(row1, math.ceil(n_users / 2))
    return LinkGains(np.vstack([row1, row2]), 'limiting', profile)


def beta_averages(gains: LinkGains) -> BetaAverages:
    """Finite-K averages of the link gains.

    The cross-product average of user i is (1 / (N (K - 1))) * sum over k != i
    and n of beta[n, i] * beta[n, k]; it is zero when K = 1.
    """
    beta = gains.beta
    n, k = beta.shape

    row_sums = beta.sum(axis=1, keepdims=True)
    cross = (beta * (row_sums - beta)).sum(axis=0)
    beta_ik_bar = cross / (n * (k - 1)) if k > 1 else np.zeros(k)

    return BetaAverages(
        beta_bar_i=beta.mean(axis=0),
        beta_sq_bar_i=np.square(beta).mean(axis=0),
        beta_bar=float(beta.mean()),
        beta_ik_bar=beta_ik_bar,
    )


def closed_form_limits(beta_min: float, beta_max: float,
                       n_users: int) -> Tuple[float, Callable[[int], float]]:
    """Analytic K -> infinity averages of the single-cluster exponential profile.

    Returns the grand mean (the integral of beta(x) over [0, 1]) and the map
    i -> beta((2i - 1) / 2K) * beta_bar for users i = 1..K.
    """
    if not 0 < beta_min <= beta_max:
        raise InvalidConfigError(f"Need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}")

    log_span = math.log(beta_max) - math.log(beta_min)
    if log_span == 0.0:
        beta_bar = beta_max
    else:
        beta_bar = (beta_max - beta_min) / log_span

    def beta_ik_bar(i: int) -> float:
        return float(profile_gain((2.0 * i - 1.0) / (2.0 * n_users), beta_min, beta_max)) * beta_bar

    return beta_bar, beta_ik_bar


def export_drop(layout: DropLayout, gains: LinkGains, path: str) -> str:
    """Write a drop's geometry and gains as one CSV (one row per link)."""
    frame = layout.to_frame()
    frame['beta'] = gains.beta.ravel()
    return write_frame(frame, path)
