"""Analytic test fields with known answers.

These are used by the demos, the ``synth`` command and the acceptance
suite. Distances are great-circle degrees from the feature centre.
"""

from __future__ import annotations

import numpy as np

from .grid import GridSpec, great_circle_degrees


def vortex_fields(
    spec: GridSpec,
    lat_c: float,
    lon_c: float,
    center_hpa: float = 1000.0,
    depth_hpa: float = 15.0,
    sigma_deg: float = 3.0,
    thickness_bump_m: float = 20.0,
    vmax: float = 40.0,
    rmax_deg: float = 1.0,
) -> dict[str, np.ndarray]:
    """Axisymmetric warm-core cyclone on ``spec``.

    MSLP is ``center + depth * (1 - exp(-r²/σ²))``; the 300-500 hPa
    thickness carries a Gaussian bump of ``thickness_bump_m`` at the centre;
    10 m winds follow a Rankine-like profile peaking at ``rmax_deg``,
    turning counter-clockwise in the northern hemisphere.

    Returns:
        dict with ``mslp`` (hPa), ``z300``, ``z500`` (m), ``u10``, ``v10`` (m/s).
    """
    lat2d, lon2d = spec.mesh()
    r = great_circle_degrees(lat2d, lon2d, lat_c, lon_c)
    mslp = center_hpa + depth_hpa * (1.0 - np.exp(-(r / sigma_deg) ** 2))
    z500 = np.full(spec.shape, 5600.0)
    z300 = z500 + 3600.0 + thickness_bump_m * np.exp(-(r / sigma_deg) ** 2)

    x = r / rmax_deg
    speed = vmax * np.where(x <= 1.0, x, np.exp(1.0 - x))
    # local bearing from the centre; tangential wind is perpendicular to it
    dlat = np.deg2rad(lat2d - lat_c)
    dlon = np.deg2rad(((lon2d - lon_c) + 180.0) % 360.0 - 180.0) * np.cos(np.deg2rad(lat2d))
    norm = np.hypot(dlat, dlon)
    norm = np.where(norm > 0, norm, 1.0)
    sign = 1.0 if lat_c >= 0 else -1.0
    u10 = -sign * speed * dlat / norm
    v10 = sign * speed * dlon / norm
    return {"mslp": mslp, "z300": z300, "z500": z500, "u10": u10, "v10": v10}


def combine_vortices(spec: GridSpec, vortices, environment_hpa: float = 1015.0) -> dict[str, np.ndarray]:
    """Superpose several vortices, each a dict of :func:`vortex_fields` kwargs.

    Pressure and thickness anomalies and winds add linearly on top of a flat
    environment of ``environment_hpa``.
    """
    if not vortices:
        raise ValueError("no vortices given")
    out = {
        "mslp": np.full(spec.shape, environment_hpa),
        "z500": np.full(spec.shape, 5600.0),
        "z300": np.full(spec.shape, 9200.0),
        "u10": np.zeros(spec.shape),
        "v10": np.zeros(spec.shape),
    }
    for kw in vortices:
        f = vortex_fields(spec, **kw)
        out["mslp"] += f["mslp"] - (kw.get("center_hpa", 1000.0) + kw.get("depth_hpa", 15.0))
        out["z300"] += f["z300"] - f["z500"] - 3600.0
        out["u10"] += f["u10"]
        out["v10"] += f["v10"]
    return out


def ivt_plume(
    spec: GridSpec,
    lat_c: float,
    lon_c: float,
    sigma_lat_pts: float = 6.0,
    sigma_lon_pts: float = 23.0,
    peak: float = 800.0,
    background: float = 0.0,
) -> np.ndarray:
    """Elliptical Gaussian IVT plume; widths are in gridpoints.

    With the defaults roughly 600 points exceed 400 kg m⁻¹ s⁻¹.
    """
    lat2d, lon2d = spec.mesh()
    di = (lat2d - lat_c) / spec.dlat
    dj = (((lon2d - lon_c) + 180.0) % 360.0 - 180.0) / spec.dlon
    return background + peak * np.exp(-0.5 * ((di / sigma_lat_pts) ** 2 + (dj / sigma_lon_pts) ** 2))
