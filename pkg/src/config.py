"""Configuration management for the MF massive MIMO simulator."""

import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from loguru import logger

from .errors import InvalidConfigError, UnsupportedConfigError

# Load environment variables
load_dotenv()


class Config:
    """Process-wide settings for the simulator."""

    # Runtime settings
    THREADS = int(os.getenv('MASSIM_THREADS', '0'))
    LOG_LEVEL = os.getenv('MASSIM_LOG_LEVEL', 'INFO')
    LOG_DIR = os.getenv('MASSIM_LOG_DIR', 'logs')
    OUTPUT_DIR = os.getenv('MASSIM_OUTPUT_DIR', 'results')

    SPEED_OF_LIGHT = 299_792_458.0

    EXPERIMENTS = (
        'convergence',
        'error_cdf',
        'shadow_sweep',
        'sinr_cdf',
        'single_user_cdf',
        'lambda_table',
    )

    LINK_MODELS = ('statistical', 'limiting')
    DISTANCE_UNITS = ('wavelength', 'meter')
    CDF_MODES = ('mean_user', 'single_user')
    VIRTUAL_LIMIT_MODES = ('analytic', 'simulated')

    # Published average squared eigenvalues of R_t for M = 1000, keyed N -> r_pol
    REFERENCE_LAMBDA_TABLE = {
        1: {0.1: 28.71, 0.2: 29.57, 0.3: 30.99, 0.4: 32.98, 0.5: 35.54},
        2: {0.1: 13.95, 0.2: 14.36, 0.3: 15.05, 0.4: 16.02, 0.5: 17.26},
        5: {0.1: 1.42, 0.2: 1.46, 0.3: 1.53, 0.4: 1.63, 0.5: 1.75},
        10: {0.1: 1.17, 0.2: 1.21, 0.3: 1.26, 0.4: 1.34, 0.5: 1.47},
    }

    @classmethod
    def worker_count(cls, requested: Optional[int] = None) -> int:
        """Resolve the number of worker processes (0 means one per CPU)."""
        threads = cls.THREADS if requested is None else requested
        if threads < 0:
            raise InvalidConfigError(f"Thread count must be >= 0, got {threads}")
        return threads or (os.cpu_count() or 1)


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def antenna_count(alpha: float, n_users: int, n_clusters: int) -> int:
    """Total antennas M = alpha*K, required to be an integer divisible by 2N."""
    m = alpha * n_users
    m_int = int(round(m))
    if not math.isclose(m, m_int, rel_tol=0.0, abs_tol=1e-9) or m_int <= 0:
        raise InvalidConfigError(
            f"K*alpha must be a positive integer divisible by 2N "
            f"(K={n_users}, alpha={alpha}, N={n_clusters})"
        )
    if m_int % (2 * n_clusters):
        raise InvalidConfigError(
            f"K*alpha = {m_int} must be divisible by 2N = {2 * n_clusters} "
            f"(K={n_users}, alpha={alpha}, N={n_clusters})"
        )
    return m_int


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of one simulated downlink system."""

    alpha: float = 10.0
    rho_f_db: float = 10.0
    xi: float = 1.0
    noise_power: float = 1.0
    n_users: int = 100
    n_clusters: int = 1

    # Link gains
    link_model: str = 'statistical'
    profile: int = 1
    beta_max_db: float = 15.0
    beta_min_db: float = -15.0
    shadow_sigma_db: float = 8.0
    pathloss_exponent: float = 4.0
    d_min_m: float = 50.0
    d_max_m: float = 1000.0
    region_radius_m: float = 1000.0

    # Transmit correlation
    correlated: bool = False
    corr_base: float = 4.0
    r_pol: float = 0.1
    side_length_m: float = 1.0
    carrier_freq_hz: float = 2.6e9
    distance_unit: str = 'meter'

    @property
    def rho_f(self) -> float:
        return db_to_linear(self.rho_f_db)

    @property
    def beta_max(self) -> float:
        return db_to_linear(self.beta_max_db)

    @property
    def beta_min(self) -> float:
        return db_to_linear(self.beta_min_db)

    @property
    def n_antennas(self) -> int:
        return antenna_count(self.alpha, self.n_users, self.n_clusters)

    @property
    def antennas_per_cluster(self) -> int:
        return self.n_antennas // self.n_clusters

    def with_cell(self, **changes: Any) -> 'SystemConfig':
        """Copy with some fields replaced, validated."""
        return replace(self, **changes).validate()

    def validate(self) -> 'SystemConfig':
        """Validate the parameter set and return it unchanged."""
        problems = []

        if self.alpha <= 0:
            problems.append(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.xi <= 1.0:
            problems.append(f"xi must lie in [0, 1], got {self.xi}")
        if self.noise_power <= 0:
            problems.append(f"noise_power must be > 0, got {self.noise_power}")
        if self.n_users < 1:
            problems.append(f"n_users must be >= 1, got {self.n_users}")
        if self.n_clusters < 1:
            problems.append(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.link_model not in Config.LINK_MODELS:
            problems.append(f"link_model must be one of {Config.LINK_MODELS}, got {self.link_model!r}")
        if self.profile not in (1, 2, 3):
            problems.append(f"profile must be 1, 2 or 3, got {self.profile}")
        if self.beta_min_db > self.beta_max_db:
            problems.append("beta_min_db must not exceed beta_max_db")
        if self.shadow_sigma_db < 0:
            problems.append(f"shadow_sigma_db must be >= 0, got {self.shadow_sigma_db}")
        if self.d_min_m <= 0 or self.d_max_m <= self.d_min_m:
            problems.append(f"need 0 < d_min_m < d_max_m, got {self.d_min_m}, {self.d_max_m}")
        if self.region_radius_m <= 0:
            problems.append(f"region_radius_m must be > 0, got {self.region_radius_m}")
        if self.corr_base <= 0:
            problems.append(f"corr_base must be > 0, got {self.corr_base}")
        if not 0.0 <= self.r_pol < 1.0:
            problems.append(f"r_pol must lie in [0, 1), got {self.r_pol}")
        if self.side_length_m <= 0 or self.carrier_freq_hz <= 0:
            problems.append("side_length_m and carrier_freq_hz must be > 0")
        if self.distance_unit not in Config.DISTANCE_UNITS:
            problems.append(f"distance_unit must be one of {Config.DISTANCE_UNITS}, got {self.distance_unit!r}")

        if problems:
            raise InvalidConfigError("; ".join(problems))

        if self.link_model == 'limiting' and self.n_clusters > 2:
            raise UnsupportedConfigError(
                f"The limiting link gain model supports at most 2 clusters, got N={self.n_clusters}"
            )

        antenna_count(self.alpha, self.n_users, self.n_clusters)
        return self


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise InvalidConfigError(f"Not a boolean: {text!r}")


def _list_of(convert: Callable[[str], Any]) -> Callable[[Any], Tuple[Any, ...]]:
    def parse(text: Any) -> Tuple[Any, ...]:
        if isinstance(text, (list, tuple)):
            return tuple(convert(item) for item in text)
        items = [item.strip() for item in str(text).split(',') if item.strip()]
        if not items:
            raise InvalidConfigError("Empty list value")
        return tuple(convert(item) for item in items)
    return parse


_EXPERIMENT_KEYS: Dict[str, Callable[[Any], Any]] = {
    'experiment': str,
    'k_values': _list_of(int),
    'n_values': _list_of(int),
    'xi_values': _list_of(float),
    'shadow_values': _list_of(float),
    'r_pol_values': _list_of(float),
    'correlation_values': _list_of(_parse_bool),
    'distance_units': _list_of(str),
    'n_drops': int,
    'n_fading_realizations': int,
    'average_fading': _parse_bool,
    'mode': str,
    'virtual_limit': str,
    'virtual_antennas': int,
    'table_antennas': int,
    'seed': int,
    'output_path': str,
    'threads': int,
}


def _system_converter(default: Any) -> Callable[[Any], Any]:
    # bool first: bool is a subclass of int
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


_SYSTEM_KEYS: Dict[str, Callable[[Any], Any]] = {
    f.name: _system_converter(f.default) for f in fields(SystemConfig)
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run: which study, its sweep grid and its outputs."""

    experiment: str = 'convergence'
    system: SystemConfig = field(default_factory=SystemConfig)
    k_values: Tuple[int, ...] = (20, 60, 100)
    n_values: Tuple[int, ...] = (1, 2)
    xi_values: Tuple[float, ...] = (1.0, 0.8)
    shadow_values: Tuple[float, ...] = (6.0, 8.0, 10.0)
    r_pol_values: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    correlation_values: Optional[Tuple[bool, ...]] = None
    distance_units: Tuple[str, ...] = ('wavelength', 'meter')
    n_drops: int = 100
    n_fading_realizations: Optional[int] = None
    average_fading: bool = False
    mode: str = 'mean_user'
    virtual_limit: str = 'analytic'
    virtual_antennas: int = 1400
    table_antennas: int = 1000
    seed: int = 0
    output_path: str = ''
    threads: Optional[int] = None

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> 'ExperimentConfig':
        """Build from flat key/value pairs (strings or already typed values)."""
        experiment_kwargs: Dict[str, Any] = {}
        system_kwargs: Dict[str, Any] = {}
        unknown = []

        for raw_key, raw_value in values.items():
            key = raw_key.strip().lower()
            if raw_value is None:
                raise InvalidConfigError(f"Key {key!r} has no value")
            try:
                if key in _EXPERIMENT_KEYS:
                    experiment_kwargs[key] = _EXPERIMENT_KEYS[key](raw_value)
                elif key in _SYSTEM_KEYS:
                    system_kwargs[key] = _SYSTEM_KEYS[key](raw_value)
                else:
                    unknown.append(key)
            except (TypeError, ValueError) as e:
                if isinstance(e, InvalidConfigError):
                    raise
                raise InvalidConfigError(f"Bad value for {key!r}: {raw_value!r}") from e

        if unknown:
            raise InvalidConfigError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

        config = cls(system=SystemConfig(**system_kwargs), **experiment_kwargs)
        return config.validate()

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Mapping[str, Any]] = None) -> 'ExperimentConfig':
        """Load a flat key=value file; `overrides` take precedence over file values."""
        if not os.path.isfile(path):
            raise InvalidConfigError(f"Config file not found: {path}")

        values: Dict[str, Any] = dict(dotenv_values(path))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value

        logger.debug(f"Loaded {len(values)} configuration keys from {path}")
        return cls.from_mapping(values)

    @property
    def fading_realizations(self) -> int:
        """Fading realizations per drop (or per cell for convergence).

        Only the instantaneous SINR CDFs default to a single realization.
        """
        if self.n_fading_realizations is not None:
            return self.n_fading_realizations
        if self.experiment == 'convergence':
            return 200
        if self.experiment in ('sinr_cdf', 'single_user_cdf') and not self.average_fading:
            return 1
        return 50

    @property
    def correlations(self) -> Tuple[bool, ...]:
        """Correlation settings swept by the CDF experiments."""
        if self.correlation_values is None:
            return (self.system.correlated,)
        return self.correlation_values

    @property
    def virtual_users(self) -> int:
        """Users in the simulated virtual-limit system (virtual_antennas / alpha)."""
        k = self.virtual_antennas / self.system.alpha
        if not math.isclose(k, round(k), rel_tol=0.0, abs_tol=1e-9) or round(k) < 1:
            raise InvalidConfigError(
                f"virtual_antennas / alpha must be a positive integer, got {self.virtual_antennas} / {self.system.alpha}"
            )
        return int(round(k))

    @property
    def cdf_mode(self) -> str:
        return 'single_user' if self.experiment == 'single_user_cdf' else self.mode

    @property
    def resolved_output_path(self) -> str:
        if self.output_path:
            return self.output_path
        return os.path.join(Config.OUTPUT_DIR, f"{self.experiment}.csv")

    def grid(self) -> Tuple[Tuple[int, int], ...]:
        """(K, N) pairs the experiment will simulate."""
        if self.experiment == 'shadow_sweep':
            return ((self.system.n_users, self.system.n_clusters),)
        if self.experiment == 'lambda_table':
            return ()
        if self.experiment in ('sinr_cdf', 'single_user_cdf'):
            return tuple((self.system.n_users, n) for n in self.n_values)
        return tuple((k, n) for k in self.k_values for n in self.n_values)

    def validate(self) -> 'ExperimentConfig':
        """Validate the experiment and every grid cell it implies."""
        if self.experiment not in Config.EXPERIMENTS:
            raise InvalidConfigError(
                f"experiment must be one of {Config.EXPERIMENTS}, got {self.experiment!r}"
            )
        if self.n_drops < 1:
            raise InvalidConfigError(f"n_drops must be >= 1, got {self.n_drops}")
        if self.fading_realizations < 1:
            raise InvalidConfigError("n_fading_realizations must be >= 1")
        if self.mode not in Config.CDF_MODES:
            raise InvalidConfigError(f"mode must be one of {Config.CDF_MODES}, got {self.mode!r}")
        if self.virtual_limit not in Config.VIRTUAL_LIMIT_MODES:
            raise InvalidConfigError(
                f"virtual_limit must be one of {Config.VIRTUAL_LIMIT_MODES}, got {self.virtual_limit!r}"
            )
        for unit in self.distance_units:
            if unit not in Config.DISTANCE_UNITS:
                raise InvalidConfigError(f"Unknown distance unit {unit!r}")
        for xi in self.xi_values:
            if not 0.0 <= xi <= 1.0:
                raise InvalidConfigError(f"xi values must lie in [0, 1], got {xi}")

        self.system.validate()

        if self.experiment == 'convergence':
            for n in self.n_values:
                if n > 2:
                    raise UnsupportedConfigError(
                        f"The limiting link gain model supports at most 2 clusters, got N={n}"
                    )

        for k, n in self.grid():
            antenna_count(self.system.alpha, k, n)

        if self.experiment == 'lambda_table':
            for n in self.n_values:
                if self.table_antennas % (2 * n):
                    raise InvalidConfigError(
                        f"table_antennas = {self.table_antennas} must be divisible by 2N = {2 * n}"
                    )

        if self.experiment == 'error_cdf':
            for n in self.n_values:
                antenna_count(self.system.alpha, self.virtual_users, n)

        Config.worker_count(self.threads)
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['fading_realizations'] = self.fading_realizations
        data['output_path'] = self.resolved_output_path
        return data
