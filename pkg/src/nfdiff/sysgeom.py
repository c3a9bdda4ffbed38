"""System configuration and uniform-linear-array geometry.

Everything downstream (steering vectors, dictionary, measurements) reads the
array layout and subcarrier plan from here. Distances are meters, frequencies
Hz, angles radians.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class SystemConfig:
    """Wideband hybrid-combining system parameters.

    Attributes:
        n_antennas: ULA element count N at the base station.
        n_rf: RF chains N_RF; each pilot slot yields N_RF measurement rows.
        n_users: user count M. Pilots are mutually orthogonal, so estimation
            runs per user; M is carried for bookkeeping only.
        carrier_hz: carrier frequency f_c.
        bandwidth_hz: total bandwidth B spanned by the subcarriers.
        n_subcarriers: subcarrier count K.
        pilot_len: pilot slots Q per estimation round.
        n_paths: propagation paths L (path 1 is line of sight).
        antenna_spacing: element spacing in meters; None selects lambda_c/2.
        rng_seed: master seed; every random stream below derives from it.
    """

    n_antennas: int = 256
    n_rf: int = 16
    n_users: int = 16
    carrier_hz: float = 28e9
    bandwidth_hz: float = 100e6
    n_subcarriers: int = 256
    pilot_len: int = 16
    n_paths: int = 6
    antenna_spacing: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_antennas < 1:
            raise ValueError(f"n_antennas must be >= 1, got {self.n_antennas}")
        if not 1 <= self.n_rf <= self.n_antennas:
            raise ValueError(f"need 1 <= n_rf <= n_antennas, got n_rf={self.n_rf}")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.pilot_len < 1:
            raise ValueError("pilot_len must be >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.antenna_spacing is not None and self.antenna_spacing <= 0:
            raise ValueError("antenna_spacing must be positive when given")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def spacing(self) -> float:
        """Element spacing in meters (half wavelength unless overridden)."""
        if self.antenna_spacing is None:
            return self.wavelength / 2.0
        return self.antenna_spacing

    def replace(self, **changes) -> "SystemConfig":
        fields = asdict(self)
        fields.update(changes)
        return SystemConfig(**fields)


@dataclass(frozen=True)
class Geometry:
    """Derived array geometry and subcarrier plan.

    antenna_offsets holds delta_n * d in meters with delta_n = (2n - N + 1)/2,
    so the offsets are symmetric about the array center and sum to zero.
    """

    wavelength: float
    spacing: float
    subcarrier_freqs: np.ndarray  # (K,), strictly increasing, centered on f_c
    antenna_offsets: np.ndarray  # (N,), meters
    fraunhofer_m: float  # d_F = 2 D^2 / lambda_c, D = N d
    fresnel_m: float  # d_FR = (D/2) sqrt(D / lambda_c)


def derive_geometry(cfg: SystemConfig) -> Geometry:
    """Populate wavelength, subcarrier grid, offsets and field boundaries.

    Subcarriers follow f_k = f_c + B(2k - K - 1)/(2K) for k = 1..K: a
    symmetric grid centered on the carrier and contained in [f_c - B/2,
    f_c + B/2].
    """
    n = cfg.n_antennas
    lam = cfg.wavelength
    d = cfg.spacing

    k = np.arange(1, cfg.n_subcarriers + 1, dtype=np.float64)
    freqs = cfg.carrier_hz + cfg.bandwidth_hz * (2.0 * k - cfg.n_subcarriers - 1.0) / (
        2.0 * cfg.n_subcarriers
    )

    delta = (2.0 * np.arange(n, dtype=np.float64) - n + 1.0) / 2.0
    aperture = n * d
    fraunhofer = 2.0 * aperture**2 / lam
    fresnel = (aperture / 2.0) * np.sqrt(aperture / lam)

    return Geometry(
        wavelength=lam,
        spacing=d,
        subcarrier_freqs=freqs,
        antenna_offsets=delta * d,
        fraunhofer_m=fraunhofer,
        fresnel_m=fresnel,
    )


_CONFIG_KEYS = frozenset(SystemConfig.__dataclass_fields__)


def load_config(path: str) -> SystemConfig:
    """Read a SystemConfig from a UTF-8 JSON file; keys match field names."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return SystemConfig(**raw)


def save_config(cfg: SystemConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=2)
        fh.write("\n")
