# core/meshes.py

"""
Procedural object models for the simulator benchmarks.

Every builder returns a watertight, outward-oriented TriangleMesh centred on
its bounding box. Prisms are shapely outlines extruded by trimesh; boxes and
spheres come from trimesh as well.
"""

import logging

import numpy as np
import trimesh
from shapely.geometry import Polygon

from .exceptions import ConfigurationError
from .geometry import Pose
from .sdf import TriangleMesh

logger = logging.getLogger(__name__)


def _centred(mesh):
    lo, hi = mesh.bounds()
    return TriangleMesh(mesh.vertices - 0.5 * (lo + hi), mesh.triangles).oriented_outward()


def extrude_polygon(polygon, height):
    """Prism over a simple 2D polygon, spanning z in [0, height]."""
    outline = Polygon(polygon)
    if not outline.is_valid or outline.area <= 0.0:
        raise ConfigurationError("Polygon outline is not simple; it cannot be extruded.")
    prism = trimesh.creation.extrude_polygon(outline, float(height), engine='earcut')
    return TriangleMesh.from_trimesh(prism)


def _swap_yz(mesh):
    # lay a prism on its side: polygon plane becomes the xz plane
    return TriangleMesh(mesh.vertices[:, [0, 2, 1]], mesh.triangles)


def box(extents=(20.0, 20.0, 20.0)):
    return _centred(TriangleMesh.from_trimesh(trimesh.creation.box(extents=extents)))


def icosphere(radius=20.0, subdivisions=3):
    return _centred(TriangleMesh.from_trimesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)))


def l_bracket(long_leg=60.0, short_leg=36.0, thickness=10.0, depth=24.0):
    """L-shaped prism with unequal legs, so it has no rotational symmetry."""
    outline = [(0, 0), (long_leg, 0), (long_leg, thickness), (thickness, thickness),
               (thickness, short_leg), (0, short_leg)]
    return _centred(extrude_polygon(outline, depth))


def v_groove(width=60.0, height=30.0, groove_depth=20.0, length=40.0, opening_angle_deg=90.0):
    """Block with a V notch along y, opening toward +z."""
    half_opening = groove_depth * np.tan(np.radians(opening_angle_deg) / 2.0)
    if half_opening >= width / 2 or groove_depth >= height:
        raise ConfigurationError("The groove does not fit inside the block.")
    outline = [(-width / 2, 0), (width / 2, 0), (width / 2, height), (half_opening, height),
               (0, height - groove_depth), (-half_opening, height), (-width / 2, height)]
    return _centred(_swap_yz(extrude_polygon(outline, length)))


def glossy_part(width=60.0, height=16.0, tooth=10.0, teeth=4, length=30.0):
    """Sawtooth-topped bar: concave pockets between teeth favour inter-reflections."""
    pitch = width / teeth
    outline = [(-width / 2, 0), (width / 2, 0), (width / 2, height + tooth)]
    for i in range(1, teeth + 1):
        x = width / 2 - i * pitch
        outline.append((x, height))
        if i < teeth:
            outline.append((x, height + tooth))
    return _centred(_swap_yz(extrude_polygon(outline, length)))


def bin_parts(inner=(160.0, 160.0), wall_height=40.0, thickness=4.0):
    """Floor plus two walls of an open bin (x-min and y-min sides), as (mesh, T_wo) pairs."""
    sx, sy = inner
    floor = box((sx, sy, thickness))
    wall_x = box((thickness, sy, wall_height))
    wall_y = box((sx, thickness, wall_height))
    return [
        (floor, Pose(np.eye(3), [0.0, 0.0, -thickness / 2])),
        (wall_x, Pose(np.eye(3), [-sx / 2 - thickness / 2, 0.0, wall_height / 2 - thickness])),
        (wall_y, Pose(np.eye(3), [0.0, -sy / 2 - thickness / 2, wall_height / 2 - thickness])),
    ]


PROCEDURAL_KINDS = {
    'l-bracket': l_bracket,
    'cube': lambda: box((30.0, 30.0, 30.0)),
    'v-groove': v_groove,
    'sphere': lambda: icosphere(20.0, 3),
    'glossy-part': glossy_part,
}


def procedural_mesh(kind):
    try:
        builder = PROCEDURAL_KINDS[kind]
    except KeyError:
        raise ConfigurationError(
            f"Unknown object kind '{kind}'. Choose one of: {', '.join(sorted(PROCEDURAL_KINDS))}."
        ) from None
    mesh = builder()
    logger.debug("Built procedural %s mesh with %d triangles", kind, len(mesh.triangles))
    return mesh


def sphere_distance(radius, centre=(0.0, 0.0, 0.0)):
    """Analytic signed distance of a sphere, as a callable on (N, 3) points."""
    centre = np.asarray(centre, dtype=float)
    return lambda p: np.linalg.norm(p - centre, axis=1) - radius


def box_distance(half_extents):
    """Analytic signed distance of an axis-aligned box centred at the origin."""
    half_extents = np.asarray(half_extents, dtype=float)

    def distance(p):
        q = np.abs(p) - half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    return distance
