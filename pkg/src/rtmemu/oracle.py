"""Synthetic radiative transfer forward model.

A closed-form single-scattering style model that maps an atmospheric state and
a surface reflectance to top-of-atmosphere (TOA) reflectance:

    tau_r(l)  = beta_r * l**(-rayleigh_exp)
    tau_a(l)  = tau550 * (l / 0.55)**(-alpha)
    k_w(l)    = sum_j A_j * exp(-(l - c_j)**2 / (2 sigma_j**2))
    m_air     = 1/mu0 + 1/mu_v
    T(l)      = exp(-(tau_r + tau_a) * m_air) * exp(-wvap * k_w * m_air)
    s(l)      = (0.92 tau_r + 0.48 tau_a) / (1 + 0.92 tau_r + 0.48 tau_a)
    rho_path  = (0.75 tau_r + 0.54 tau_a) / (4 mu0 mu_v)
    rho_obs   = rho_path + T rho_s / (1 - s rho_s)

Every function broadcasts over numpy arrays, so a whole batch of states can be
evaluated against a whole wavelength grid in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAMBDA_MIN = 0.35
LAMBDA_MAX = 2.60
AEROSOL_REF_WAVELENGTH = 0.55

DEFAULT_WATER_BANDS = (
    (0.94, 0.30, 0.02),
    (1.14, 0.50, 0.03),
    (1.38, 2.00, 0.04),
    (1.88, 3.00, 0.05),
)

STATE_FIELDS = ("mu0", "tau550", "alpha", "wvap")
STATE_BOUNDS = {
    "mu0": (0.3, 1.0),
    "tau550": (0.0, 0.5),
    "alpha": (0.5, 2.0),
    "wvap": (0.0, 5.0),
}
RHO_S_BOUNDS = (0.0, 0.9)


class DimensionError(ValueError):
    """Raised when array lengths disagree (e.g. surface vs. wavelength grid)."""


@dataclass(frozen=True)
class WavelengthGrid:
    """Channel-center wavelengths in micrometers, strictly increasing."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if lam.size < 1:
            raise ValueError("wavelength grid needs at least one channel")
        if np.any(lam < LAMBDA_MIN) or np.any(lam > LAMBDA_MAX):
            raise ValueError(f"wavelengths must lie in [{LAMBDA_MIN}, {LAMBDA_MAX}] um")
        if lam.size > 1 and np.any(np.diff(lam) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def k(self) -> int:
        return int(self.lambdas.size)

    @classmethod
    def uniform(cls, k: int = 32, start: float = 0.40, stop: float = 2.50) -> "WavelengthGrid":
        return cls(np.linspace(start, stop, k))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.lambdas]


@dataclass(frozen=True)
class AtmosphericState:
    """Geometry, aerosol and water vapour parameters of one scene."""

    mu0: float
    tau550: float
    alpha: float
    wvap: float

    def __post_init__(self):
        for name in STATE_FIELDS:
            lo, hi = STATE_BOUNDS[name]
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu0, self.tau550, self.alpha, self.wvap], dtype=float)

    @classmethod
    def from_array(cls, values) -> "AtmosphericState":
        v = [float(x) for x in values]
        if len(v) != 4:
            raise DimensionError(f"expected 4 state parameters, got {len(v)}")
        return cls(*v)


@dataclass(frozen=True)
class SurfaceSpectrum:
    rho_s: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rho_s, dtype=float).ravel()
        lo, hi = RHO_S_BOUNDS
        if np.any(r < lo) or np.any(r > hi):
            raise ValueError(f"surface reflectance must lie in [{lo}, {hi}]")
        r.setflags(write=False)
        object.__setattr__(self, "rho_s", r)

    def __len__(self):
        return int(self.rho_s.size)


@dataclass(frozen=True)
class SolarIllumination:
    phi0: float
    e0: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.phi0 <= 1.0):
            raise ValueError("phi0 must lie in (0, 1]")
        e0 = np.asarray(self.e0, dtype=float).ravel()
        if np.any(e0 <= 0):
            raise ValueError("solar irradiance must be positive")
        object.__setattr__(self, "e0", e0)


@dataclass(frozen=True)
class OracleConfig:
    beta_r: float = 0.0088
    rayleigh_exp: float = 4.05
    mu_v: float = 1.0
    quadrature_depth: int = 0
    water_bands: tuple = field(default=DEFAULT_WATER_BANDS)

    def __post_init__(self):
        if self.beta_r < 0:
            raise ValueError("beta_r must be >= 0")
        if not (0.0 < self.mu_v <= 1.0):
            raise ValueError("mu_v must lie in (0, 1]")
        if int(self.quadrature_depth) != self.quadrature_depth or self.quadrature_depth < 0:
            raise ValueError("quadrature_depth must be a non-negative integer")
        bands = tuple(tuple(float(x) for x in b) for b in self.water_bands)
        for c, a, s in bands:
            if s <= 0 or a < 0:
                raise ValueError(f"bad water band ({c}, {a}, {s}): need amplitude >= 0, sigma > 0")
        object.__setattr__(self, "water_bands", bands)


def rayleigh_od(lam, cfg: OracleConfig):
    lam = np.asarray(lam, dtype=float)
    return cfg.beta_r * lam ** (-cfg.rayleigh_exp)


def aerosol_od(lam, tau550, alpha):
    """Aerosol optical depth with an Angstrom power law anchored at 0.55 um."""
    lam = np.asarray(lam, dtype=float)
    return tau550 * (lam / AEROSOL_REF_WAVELENGTH) ** (-np.asarray(alpha, dtype=float))


def water_absorption(lam, cfg: OracleConfig):
    lam = np.asarray(lam, dtype=float)
    kw = np.zeros_like(lam)
    for c, a, s in cfg.water_bands:
        kw = kw + a * np.exp(-((lam - c) ** 2) / (2.0 * s * s))
    return kw


def air_mass(mu0, cfg: OracleConfig):
    return 1.0 / np.asarray(mu0, dtype=float) + 1.0 / cfg.mu_v


def water_transmittance(lam, mu0, wvap, cfg: OracleConfig):
    """Two-way water vapour transmittance ``exp(-wvap * k_w * m_air)``."""
    return np.exp(-np.asarray(wvap, dtype=float) * water_absorption(lam, cfg) * air_mass(mu0, cfg))


def total_transmittance(lam, mu0, tau550, alpha, wvap, cfg: OracleConfig):
    m = air_mass(mu0, cfg)
    tau = rayleigh_od(lam, cfg) + aerosol_od(lam, tau550, alpha)
    return np.exp(-tau * m) * np.exp(-np.asarray(wvap, dtype=float) * water_absorption(lam, cfg) * m)


def spherical_albedo(tau_r, tau_a):
    num = 0.92 * tau_r + 0.48 * tau_a
    return num / (1.0 + num)


def path_reflectance(tau_r, tau_a, mu0, cfg: OracleConfig):
    return (0.75 * tau_r + 0.54 * tau_a) / (4.0 * np.asarray(mu0, dtype=float) * cfg.mu_v)


def _components(lam, mu0, tau550, alpha, wvap, cfg):
    tau_r = rayleigh_od(lam, cfg)
    tau_a = aerosol_od(lam, tau550, alpha)
    trans = total_transmittance(lam, mu0, tau550, alpha, wvap, cfg)
    # compute amplification only; results are discarded so the output is untouched
    for _ in range(int(cfg.quadrature_depth)):
        total_transmittance(lam, mu0, tau550, alpha, wvap, cfg)
    return trans, spherical_albedo(tau_r, tau_a), path_reflectance(tau_r, tau_a, mu0, cfg)


def toa_reflectance_batch(mu0, tau550, alpha, wvap, rho_s, lam, cfg: OracleConfig | None = None):
    """Broadcasting TOA reflectance over any compatible array shapes."""
    cfg = cfg or OracleConfig()
    trans, s, rho_path = _components(lam, mu0, tau550, alpha, wvap, cfg)
    rho_s = np.asarray(rho_s, dtype=float)
    return rho_path + trans * rho_s / (1.0 - s * rho_s)


def toa_reflectance(state: AtmosphericState, rho_s_i: float, lam: float,
                    cfg: OracleConfig | None = None) -> float:
    return float(toa_reflectance_batch(state.mu0, state.tau550, state.alpha, state.wvap,
                                       rho_s_i, lam, cfg))


def toa_reflectance_drho(state: AtmosphericState, rho_s_i, lam, cfg: OracleConfig | None = None):
    """Analytic derivative of TOA reflectance w.r.t. surface reflectance, T / (1 - s rho_s)**2."""
    cfg = cfg or OracleConfig()
    trans, s, _ = _components(lam, state.mu0, state.tau550, state.alpha, state.wvap, cfg)
    rho_s_i = np.asarray(rho_s_i, dtype=float)
    return trans / (1.0 - s * rho_s_i) ** 2


def radiance_from_reflectance(rho_obs, illum: SolarIllumination, channel: int):
    """Invert ``rho_obs = y pi / (phi0 e0)`` for the at-sensor radiance ``y``."""
    if not 0 <= channel < illum.e0.size:
        raise IndexError(f"channel {channel} out of range for {illum.e0.size} channels")
    return rho_obs * illum.phi0 * illum.e0[channel] / np.pi


def spectrum(state: AtmosphericState, surf: SurfaceSpectrum, grid: WavelengthGrid,
             cfg: OracleConfig | None = None) -> np.ndarray:
    if len(surf) != grid.k:
        raise DimensionError(f"surface has {len(surf)} channels, grid has {grid.k}")
    return toa_reflectance_batch(state.mu0, state.tau550, state.alpha, state.wvap,
                                 surf.rho_s, grid.lambdas, cfg)


def spectra(states: np.ndarray, rho_s: np.ndarray, grid: WavelengthGrid,
            cfg: OracleConfig | None = None) -> np.ndarray:
    """Evaluate many spectra at once.

    Parameters
    ----------
    states : (n, 4) array of [mu0, tau550, alpha, wvap]
    rho_s : (n, k) array of per-channel surface reflectance

    Returns
    -------
    (n, k) array of TOA reflectance. Row ``i`` is bitwise equal to
    ``spectrum`` evaluated for row ``i`` alone.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    rho_s = np.atleast_2d(np.asarray(rho_s, dtype=float))
    if states.shape[1] != 4:
        raise DimensionError(f"states need 4 columns, got {states.shape[1]}")
    if rho_s.shape != (states.shape[0], grid.k):
        raise DimensionError(f"rho_s shape {rho_s.shape} != ({states.shape[0]}, {grid.k})")
    cols = [states[:, j:j + 1] for j in range(4)]
    return toa_reflectance_batch(*cols, rho_s, grid.lambdas[None, :], cfg)
