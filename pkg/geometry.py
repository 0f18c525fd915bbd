import logging
import math

from exceptions import DomainError
from models import GeometryParams, LinkGeometry

logger = logging.getLogger(__name__)


def _check_elevation(theta: float) -> None:
    if not (0.0 < theta <= math.pi / 2 + 1e-12):
        raise DomainError(f"elevation {math.degrees(theta):.6g} deg outside (0, 90]")


def slant_range(theta: float, geo: GeometryParams) -> float:
    """Line-of-sight distance in km from the ground station to the satellite"""
    _check_elevation(theta)
    r_e = geo.earth_radius_km
    r_s = r_e + geo.sat_altitude_km
    return math.sqrt(r_s ** 2 - (r_e * math.cos(theta)) ** 2) - r_e * math.sin(theta)


def _layer_path(theta: float, height_km: float, earth_radius_km: float) -> float:
    # h / (sin + sqrt(sin^2 + 2h/R)); gives roughly h/2 at zenith, kept as written
    s = math.sin(theta)
    return height_km / (s + math.sqrt(s * s + 2.0 * height_km / earth_radius_km))


def atmospheric_path(theta: float, geo: GeometryParams) -> float:
    """Effective path length in km through the attenuating atmosphere"""
    _check_elevation(theta)
    return _layer_path(theta, geo.atm_height_km, geo.earth_radius_km)


def rain_path(theta: float, geo: GeometryParams) -> float:
    """Path length in km below the rain height, same functional form as the atmosphere"""
    _check_elevation(theta)
    return _layer_path(theta, geo.rain_height_km, geo.earth_radius_km)


def link_geometry(theta: float, geo: GeometryParams) -> LinkGeometry:
    return LinkGeometry(
        elevation_rad=theta,
        slant_range_km=slant_range(theta, geo),
        atm_path_km=atmospheric_path(theta, geo),
        rain_path_km=rain_path(theta, geo),
    )


def link_geometry_deg(elevation_deg: float, geo: GeometryParams) -> LinkGeometry:
    """Degrees are only accepted here, at the boundary"""
    return link_geometry(math.radians(elevation_deg), geo)
