"""Physical channel: photon rate, detector voltage and its fluctuation.

Everything here is a pure function of an immutable :class:`ChannelParams`.
The detection chain is laser -> photodiode (efficiency ``eta``) -> amplifier
(gain ``G``) -> RC load, giving a Gaussian voltage with

    <V>     = R G e eta <n>_1
    sigma_V = sqrt( R/(2C) * (G^2 e^2 eta <n>_1 + 2 k_B T / R) )

where ``<n>_1 = P / (hbar omega_0)`` is the photon arrival rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants as _codata
from scipy.special import gammaln

from .codec import MaryConfig
from .errors import ConfigError


@dataclass(frozen=True)
class PhysicalConstants:
    elementary_charge: float = _codata.e
    boltzmann: float = _codata.k
    reduced_planck: float = _codata.hbar
    light_speed: float = _codata.c


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class ChannelParams:
    """Laser/detector parameters in SI units.

    Defaults reproduce the 10 V operating point at P = 662 uW with a
    1550 nm laser (the wavelength is an assumption, see README).
    """

    optical_power: float = 662e-6
    laser_wavelength: float = 1550e-9
    gain: float = 483.4
    detector_efficiency: float = 0.5
    resistance: float = 50.0
    capacitance: float = 1e-12
    temperature: float = 300.0

    def __post_init__(self) -> None:
        for name in ("optical_power", "laser_wavelength", "gain", "resistance",
                     "capacitance", "temperature", "detector_efficiency"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a finite positive number, got {value!r}")
        if self.detector_efficiency > 1:
            raise ConfigError("detector_efficiency must lie in (0, 1]")

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelDerived:
    photon_rate: float
    mean_voltage: float
    sigma_v: float
    sigma_thermal: float
    sigma_optical: float


def photon_energy(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    omega0 = 2 * math.pi * consts.light_speed / params.laser_wavelength
    return consts.reduced_planck * omega0


def photon_rate(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    """Mean photons per second, ``P / (hbar omega_0)``."""
    return params.optical_power / photon_energy(params, consts)


def mean_voltage(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    p = params
    return p.resistance * p.gain * consts.elementary_charge * p.detector_efficiency * photon_rate(p, consts)


def _optical_variance_term(params: ChannelParams, consts: PhysicalConstants) -> float:
    p = params
    return p.gain**2 * consts.elementary_charge**2 * p.detector_efficiency * photon_rate(p, consts)


def _thermal_variance_term(params: ChannelParams, consts: PhysicalConstants) -> float:
    return 2 * consts.boltzmann * params.temperature / params.resistance


def sigma_v(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    """Standard deviation of the detector voltage (shot noise plus thermal)."""
    scale = params.resistance / (2 * params.capacitance)
    return math.sqrt(scale * (_optical_variance_term(params, consts) + _thermal_variance_term(params, consts)))


def sigma_thermal(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    """Thermal part alone; reduces to ``sqrt(k_B T / C)``."""
    scale = params.resistance / (2 * params.capacitance)
    return math.sqrt(scale * _thermal_variance_term(params, consts))


def sigma_optical(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> float:
    scale = params.resistance / (2 * params.capacitance)
    return math.sqrt(scale * _optical_variance_term(params, consts))


def derive(params: ChannelParams, consts: PhysicalConstants = CONSTANTS) -> ChannelDerived:
    return ChannelDerived(
        photon_rate=photon_rate(params, consts),
        mean_voltage=mean_voltage(params, consts),
        sigma_v=sigma_v(params, consts),
        sigma_thermal=sigma_thermal(params, consts),
        sigma_optical=sigma_optical(params, consts),
    )


def gain_for_mean_voltage(target: float, params: ChannelParams,
                          consts: PhysicalConstants = CONSTANTS) -> float:
    """Gain that puts ``<V>`` exactly at ``target`` (``<V>`` is linear in G)."""
    if target <= 0:
        raise ConfigError("target voltage must be positive")
    return target / mean_voltage(params.with_(gain=1.0), consts)


def poisson_pmf(n, mean: float):
    """Poisson probability ``e^-mean mean^n / n!`` evaluated in log space."""
    if mean <= 0:
        raise ValueError("mean must be positive")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValueError("n must be non-negative")
    out = np.exp(n_arr * math.log(mean) - mean - gammaln(n_arr + 1))
    return float(out) if out.ndim == 0 else out


def noise_over_signal(mean_photons: float) -> float:
    if mean_photons <= 0:
        raise ValueError("mean photon number must be positive")
    return 1.0 / math.sqrt(mean_photons)


def lsb(full_scale: float, adc_bits: int) -> float:
    """Voltage width of one ADC level."""
    if not full_scale > 0:
        raise ValueError("full scale must be positive")
    if adc_bits < 1:
        raise ValueError("adc_bits must be >= 1")
    return full_scale / 2**adc_bits


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the four operating-point conditions.

    Ratios are "how many times" the strong side exceeds the weak side; a
    condition holds when its ratio reaches the configured factor (1 for the
    plain inequality against the ADC LSB).
    """

    optical_dominates_thermal: bool
    optical_above_lsb: bool
    noise_below_bit_separation: bool
    noise_covers_bases: bool
    optical_to_thermal_ratio: float
    optical_to_lsb_ratio: float
    vmax_to_four_sigma_ratio: float
    two_m_sigma_to_vmax_ratio: float
    coverage_margin_v: float
    separation_margin_v: float

    @property
    def all_satisfied(self) -> bool:
        return (self.optical_dominates_thermal and self.optical_above_lsb
                and self.noise_below_bit_separation and self.noise_covers_bases)


def check_conditions(params: ChannelParams, cfg: MaryConfig, *, much: float = 10.0,
                     coverage: float = 2.0,
                     consts: PhysicalConstants = CONSTANTS) -> ConditionReport:
    """Evaluate the security/fidelity conditions at one operating point.

    ``much`` quantifies "much greater" for optical-vs-thermal variance and
    for ``V_max`` vs ``4 sigma_V``. ``coverage`` is the minimum number of
    basis spacings ``2 sigma_V`` must span; it is kept separate because the
    reference operating point only reaches about 2.
    """
    optical = _optical_variance_term(params, consts)
    thermal = _thermal_variance_term(params, consts)
    s_opt = sigma_optical(params, consts)
    s_v = sigma_v(params, consts)
    r_thermal = optical / thermal
    r_lsb = s_opt / cfg.lsb
    r_sep = cfg.v_max / (4 * s_v)
    r_cov = 2 * cfg.M * s_v / cfg.v_max
    return ConditionReport(
        optical_dominates_thermal=r_thermal >= much,
        optical_above_lsb=r_lsb > 1.0,
        noise_below_bit_separation=r_sep >= much,
        noise_covers_bases=r_cov >= coverage,
        optical_to_thermal_ratio=r_thermal,
        optical_to_lsb_ratio=r_lsb,
        vmax_to_four_sigma_ratio=r_sep,
        two_m_sigma_to_vmax_ratio=r_cov,
        coverage_margin_v=2 * cfg.M * s_v - cfg.v_max / 2,
        separation_margin_v=cfg.v_max / 2 - 4 * s_v,
    )
