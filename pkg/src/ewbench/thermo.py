"""Parcel thermodynamics for convective environments.

MLCAPE lifts a parcel holding the pressure-weighted mean potential
temperature and mixing ratio of the lowest 100 hPa. The parcel rises along
a dry adiabat to its lifting condensation level (found by bisection) and
then along a pseudoadiabat integrated with fourth-order Runge-Kutta steps of
``dp_hpa``. Buoyancy uses virtual temperature; the mixed layer itself
contributes nothing and there is no CIN gating.

All column routines broadcast over trailing axes so a whole grid is lifted
at once: pressure is a 1-D level axis shared by every column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldCube

RD = 287.04749  # J kg-1 K-1
RV = 461.5
CP_D = 1005.7
LV = 2.501e6
EPSILON = RD / RV
KAPPA = RD / CP_D
G = 9.80665
P_REF_HPA = 1000.0
CBSS_THRESHOLD = 15000.0
MIXED_LAYER_HPA = 100.0
_LCL_BISECT_STEPS = 60
_LCL_T_FLOOR = 50.0


def saturation_vapor_pressure(t_k):
    """Saturation vapour pressure over liquid water (hPa), Bolton's fit."""
    tc = np.asarray(t_k, dtype=float) - 273.15
    return 6.112 * np.exp(17.67 * tc / (tc + 243.5))


def mixing_ratio_from_vapor_pressure(e_hpa, p_hpa):
    return EPSILON * e_hpa / (p_hpa - e_hpa)


def saturation_mixing_ratio(t_k, p_hpa):
    return mixing_ratio_from_vapor_pressure(saturation_vapor_pressure(t_k), p_hpa)


def mixing_ratio_from_specific_humidity(q):
    q = np.asarray(q, dtype=float)
    return q / (1.0 - q)


def virtual_temperature(t_k, r):
    return t_k * (1.0 + r / EPSILON) / (1.0 + r)


def potential_temperature(t_k, p_hpa):
    return t_k * (P_REF_HPA / p_hpa) ** KAPPA


def moist_lapse_rate(t_k, p_hpa):
    """dT/dp (K per pressure unit of ``p_hpa``) along a pseudoadiabat."""
    rs = saturation_mixing_ratio(t_k, p_hpa)
    return (RD * t_k + LV * rs) / (p_hpa * (CP_D + LV * LV * rs * EPSILON / (RD * t_k * t_k)))


@dataclass(frozen=True)
class SoundingProfile:
    """One vertical profile; pressure (hPa) descends from the surface.

    Moisture is given either as dewpoint (K) or as specific humidity (kg/kg).
    """

    pressure: np.ndarray
    temperature: np.ndarray
    dewpoint: np.ndarray | None = None
    specific_humidity: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.pressure, dtype=float)
        object.__setattr__(self, "pressure", p)
        object.__setattr__(self, "temperature", np.asarray(self.temperature, dtype=float))
        if (self.dewpoint is None) == (self.specific_humidity is None):
            raise ValueError("give exactly one of dewpoint or specific_humidity")
        for name in ("dewpoint", "specific_humidity"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if p.ndim != 1 or p.size < 5:
            raise ValueError("a sounding needs at least five levels")
        if np.any(np.diff(p) >= 0):
            raise ValueError("sounding pressure must be strictly decreasing")
        for v in (self.temperature, self.dewpoint, self.specific_humidity):
            if v is not None and v.shape != p.shape:
                raise ValueError("profile arrays must match the pressure axis")

    def mixing_ratio(self) -> np.ndarray:
        if self.dewpoint is not None:
            return mixing_ratio_from_vapor_pressure(saturation_vapor_pressure(self.dewpoint), self.pressure)
        return mixing_ratio_from_specific_humidity(self.specific_humidity)


def _interp_weights(p_levels: np.ndarray, p_targets: np.ndarray):
    """Bracketing indices and log-pressure weights of ``p_targets`` on ``p_levels``."""
    x = -np.log(p_levels)
    xt = -np.log(p_targets)
    k = np.clip(np.searchsorted(x, xt, side="right") - 1, 0, x.size - 2)
    w = (xt - x[k]) / (x[k + 1] - x[k])
    return k, w


def _interp_columns(values: np.ndarray, k: np.ndarray, w: np.ndarray) -> np.ndarray:
    shape = (-1,) + (1,) * (values.ndim - 1)
    return values[k] * (1.0 - w.reshape(shape)) + values[k + 1] * w.reshape(shape)


def mixed_layer_parcel(p_hpa, t_k, r, depth_hpa: float = MIXED_LAYER_HPA):
    """Pressure-weighted mean potential temperature and mixing ratio of the lowest layer.

    Returns:
        (theta, r) arrays with the column shape.
    """
    p = np.asarray(p_hpa, dtype=float)
    top = p[0] - depth_hpa
    inside = p > top
    k, w = _interp_weights(p, np.array([top]))
    theta = potential_temperature(t_k, p.reshape((-1,) + (1,) * (np.ndim(t_k) - 1)))
    edges = np.concatenate([p[inside], [top]])
    th = np.concatenate([theta[inside], _interp_columns(theta, k, w)])
    rr = np.concatenate([np.asarray(r, dtype=float)[inside], _interp_columns(np.asarray(r, dtype=float), k, w)])
    dp = -np.diff(edges).reshape((-1,) + (1,) * (th.ndim - 1))
    return _layer_mean(th, dp, depth_hpa), _layer_mean(rr, dp, depth_hpa)


def _layer_mean(v: np.ndarray, dp: np.ndarray, depth: float) -> np.ndarray:
    return (0.5 * (v[1:] + v[:-1]) * dp).sum(axis=0) / depth


def lcl(p0_hpa, t0_k, r):
    """Lifting condensation level of a parcel by bisection on temperature.

    The parcel conserves potential temperature and mixing ratio; the LCL is
    where its mixing ratio equals saturation. Columns with no moisture get
    pressure 0 (never saturated).

    Returns:
        (p_lcl_hpa, t_lcl_k)
    """
    t0 = np.asarray(t0_k, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), t0.shape)
    p0 = np.broadcast_to(np.asarray(p0_hpa, dtype=float), t0.shape)

    def p_of(t):
        return p0 * (t / t0) ** (1.0 / KAPPA)

    saturated = saturation_mixing_ratio(t0, p0) <= r
    lo = np.full(t0.shape, _LCL_T_FLOOR)
    hi = t0.copy()
    for _ in range(_LCL_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        wet = saturation_mixing_ratio(mid, p_of(mid)) <= r
        lo = np.where(wet, mid, lo)
        hi = np.where(wet, hi, mid)
    t_lcl = np.where(saturated, t0, 0.5 * (lo + hi))
    p_lcl = np.where(saturated, p0, p_of(t_lcl))
    dry = r <= 0.0
    return np.where(dry, 0.0, p_lcl), np.where(dry, 0.0, t_lcl)


def _rk4(t, p, h):
    k1 = moist_lapse_rate(t, p)
    k2 = moist_lapse_rate(t + 0.5 * h * k1, p + 0.5 * h)
    k3 = moist_lapse_rate(t + 0.5 * h * k2, p + 0.5 * h)
    k4 = moist_lapse_rate(t + h * k3, p + h)
    return t + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _fine_axis(p_sfc: float, p_ml_top: float, p_end: float, dp: float) -> tuple[np.ndarray, int]:
    lower = np.arange(p_sfc, p_ml_top, -dp)
    upper = np.arange(p_ml_top, p_end, -dp)
    fine = np.concatenate([lower, upper, [p_end]])
    return fine, lower.size


def mlcape_columns(
    p_hpa,
    t_k,
    r,
    mixed_layer_hpa: float = MIXED_LAYER_HPA,
    dp_hpa: float = 1.0,
) -> np.ndarray:
    """MLCAPE (J/kg) for columns sharing the pressure axis ``p_hpa``.

    Args:
        p_hpa: (nlev,) pressure, strictly decreasing from the surface.
        t_k: (nlev, ...) temperature.
        r: (nlev, ...) water-vapour mixing ratio (kg/kg).
        mixed_layer_hpa: depth of the mixed layer.
        dp_hpa: ascent step.

    Raises:
        ValueError: fewer than five levels, non-monotone pressure, surface
            pressure at or below 500 hPa, or a profile ending inside the
            mixed layer.
    """
    p = np.asarray(p_hpa, dtype=float)
    t = np.asarray(t_k, dtype=float)
    r = np.asarray(r, dtype=float)
    if p.ndim != 1 or p.size < 5:
        raise ValueError("a sounding needs at least five levels")
    if np.any(np.diff(p) >= 0):
        raise ValueError("sounding pressure must be strictly decreasing")
    if t.shape[0] != p.size or r.shape != t.shape:
        raise ValueError("profile arrays must match the pressure axis")
    if p[0] <= 500.0:
        raise ValueError("surface pressure must exceed 500 hPa")
    p_ml_top = p[0] - mixed_layer_hpa
    if p[-1] >= p_ml_top:
        raise ValueError("profile must extend above the mixed layer")
    if dp_hpa <= 0:
        raise ValueError("dp_hpa must be positive")

    theta_ml, r_ml = mixed_layer_parcel(p, t, r, mixed_layer_hpa)
    t0 = theta_ml * (p[0] / P_REF_HPA) ** KAPPA
    p_lcl, t_lcl = lcl(p[0], t0, r_ml)

    fine, top_index = _fine_axis(p[0], p_ml_top, p[-1], dp_hpa)
    k, w = _interp_weights(p, fine)
    t_env = _interp_columns(t, k, w)
    r_env = _interp_columns(r, k, w)

    t_par = np.empty_like(t_env)
    t_par[0] = t0
    for i in range(fine.size - 1):
        pa, pb = fine[i], fine[i + 1]
        crossing = (pa >= p_lcl) & (p_lcl > pb)
        start_p = np.where(crossing, p_lcl, pa)
        start_t = np.where(crossing, t_lcl, t_par[i])
        moist = _rk4(start_t, start_p, pb - start_p)
        dry = theta_ml * (pb / P_REF_HPA) ** KAPPA
        t_par[i + 1] = np.where(pb >= p_lcl, dry, moist)

    shape = (-1,) + (1,) * (t.ndim - 1)
    pf = fine.reshape(shape)
    r_par = np.where(pf >= p_lcl, r_ml, saturation_mixing_ratio(t_par, pf))
    excess = np.maximum(0.0, virtual_temperature(t_par, r_par) - virtual_temperature(t_env, r_env))
    excess = excess[top_index:]
    dlnp = -np.diff(np.log(fine[top_index:])).reshape(shape)
    return RD * (0.5 * (excess[1:] + excess[:-1]) * dlnp).sum(axis=0)


def compute_mlcape(profile: SoundingProfile, mixed_layer_hpa: float = MIXED_LAYER_HPA, dp_hpa: float = 1.0) -> float:
    """MLCAPE (J/kg) of a single sounding; always non-negative."""
    return float(mlcape_columns(profile.pressure, profile.temperature, profile.mixing_ratio(), mixed_layer_hpa, dp_hpa))


def mlcape_from_cubes(
    temperature: FieldCube,
    specific_humidity: FieldCube,
    time_index: int = 0,
    dp_hpa: float = 1.0,
) -> np.ndarray:
    """Gridded MLCAPE from pressure-level temperature and specific humidity."""
    if temperature.spec != specific_humidity.spec or not np.array_equal(temperature.levels, specific_humidity.levels):
        raise ValueError("temperature and humidity cubes must share grid and levels")
    t = temperature.values[time_index]
    r = mixing_ratio_from_specific_humidity(specific_humidity.values[time_index])
    return mlcape_columns(temperature.levels, t, r, dp_hpa=dp_hpa)


def compute_bulk_shear(u_sfc, v_sfc, u500, v500):
    """Magnitude of the vector wind difference between 500 hPa and the surface."""
    return np.hypot(np.asarray(u500, dtype=float) - u_sfc, np.asarray(v500, dtype=float) - v_sfc)


def compute_cbss(mlcape, shear):
    """Craven-Brooks significant severe parameter, MLCAPE × shear (m³ s⁻³).

    Raises:
        ValueError: negative input.
    """
    mlcape = np.asarray(mlcape, dtype=float)
    shear = np.asarray(shear, dtype=float)
    if np.any(mlcape < 0) or np.any(shear < 0):
        raise ValueError("MLCAPE and shear must be non-negative")
    out = mlcape * shear
    return float(out) if out.ndim == 0 else out


def severe_environment(cbss, threshold: float = CBSS_THRESHOLD) -> np.ndarray:
    """Cells whose CBSS reaches ``threshold`` (inclusive)."""
    return np.asarray(cbss, dtype=float) >= threshold


def weisman_klemp_sounding(
    theta_sfc: float = 300.0,
    theta_trop: float = 343.0,
    z_trop: float = 12000.0,
    t_trop: float = 213.0,
    qv_max: float = 0.014,
    p_sfc: float = 1000.0,
    z_top: float = 16000.0,
    dz: float = 250.0,
) -> SoundingProfile:
    """The Weisman-Klemp analytic supercell sounding on ``dz`` height levels.

    Pressure follows from hydrostatic balance of the Exner function using
    virtual potential temperature; a few fixed-point passes settle the
    moisture-pressure coupling.
    """
    z = np.arange(0.0, z_top + 0.5 * dz, dz)
    theta = np.where(
        z <= z_trop,
        theta_sfc + (theta_trop - theta_sfc) * (z / z_trop) ** 1.25,
        theta_trop * np.exp(G * (z - z_trop) / (CP_D * t_trop)),
    )
    rh = np.where(z <= z_trop, 1.0 - 0.75 * (z / z_trop) ** 1.25, 0.25)
    r = np.zeros_like(z)
    pi0 = (p_sfc / P_REF_HPA) ** KAPPA
    for _ in range(6):
        theta_v = theta * (1.0 + r / EPSILON) / (1.0 + r)
        integrand = G / (CP_D * theta_v)
        pi = pi0 - np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(z))])
        p = P_REF_HPA * pi ** (1.0 / KAPPA)
        t = theta * pi
        r = np.minimum(rh * saturation_mixing_ratio(t, p), qv_max)
    q = r / (1.0 + r)
    return SoundingProfile(p, t, specific_humidity=q)
