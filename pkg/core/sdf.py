# core/sdf.py

"""
Signed distance fields of object models.

A dense, axis-aligned voxel grid stores the signed distance to the closest
triangle (negative inside, positive outside). Queries use trilinear
interpolation; the gradient is the exact derivative of that interpolant so
it agrees with finite differences of `sample`.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from .exceptions import ContractViolationError, DataError, MeshBuildError

logger = logging.getLogger(__name__)

GRID_MAGIC = b'SDFG'
GRID_VERSION = 1

DEFAULT_PADDING_VOXELS = 5
MIN_DEFAULT_VOXEL = 0.25
MAX_DEFAULT_VOXEL = 2.0


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle soup in the object frame (mm) with shared vertices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ContractViolationError("Triangle indices must reference existing vertices.")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'triangles', triangles)

    @classmethod
    def from_trimesh(cls, mesh):
        return cls(np.asarray(mesh.vertices), np.asarray(mesh.faces))

    @property
    def corners(self):
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def areas(self):
        a, b, c = np.moveaxis(self.corners, 1, 0)
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self):
        a, b, c = np.moveaxis(self.corners, 1, 0)
        n = np.cross(b - a, c - a)
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bounding_radius(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(self.vertices - 0.5 * (lo + hi), axis=1).max())

    def cleaned(self, min_area=1e-12):
        """Drop zero-area triangles."""
        keep = self.areas() > min_area
        if keep.all():
            return self
        logger.debug("Dropping %d degenerate triangles", int((~keep).sum()))
        return TriangleMesh(self.vertices, self.triangles[keep])

    def edge_counts(self):
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(edges, axis=0, return_counts=True)

    def open_edges(self):
        """Undirected edges not shared by exactly two triangles."""
        edges, counts = self.edge_counts()
        return [tuple(int(i) for i in e) for e in edges[counts != 2]]

    def is_watertight(self):
        return not self.open_edges()

    def signed_volume(self):
        a, b, c = np.moveaxis(self.corners, 1, 0)
        return float(np.einsum('ij,ij->i', a, np.cross(b, c)).sum() / 6.0)

    def oriented_outward(self):
        """Flip the winding if the signed volume is negative."""
        if self.signed_volume() >= 0:
            return self
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, T):
        return TriangleMesh(T.apply(self.vertices), self.triangles)

    def sample_surface(self, count, rng):
        """Area-weighted uniform surface samples; returns (points, outward normals)."""
        areas = self.areas()
        faces = rng.choice(len(areas), size=count, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        a, b, c = np.moveaxis(self.corners[faces], 1, 0)
        points = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        return points, self.face_normals()[faces]


def load_mesh(path):
    """Read an STL or OBJ file (triangles only) into a cleaned TriangleMesh."""
    path = Path(path)
    try:
        loaded = trimesh.load(path, force='mesh', process=True)
    except Exception as exc:
        raise DataError(f"Could not read mesh {path}: {exc}") from exc
    if len(loaded.faces) == 0:
        raise DataError(f"Mesh {path} contains no triangles.")
    return TriangleMesh.from_trimesh(loaded).cleaned()


def save_mesh(mesh, path):
    trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False).export(Path(path))


def closest_points_on_triangles(p, a, b, c):
    """Closest point on each triangle (a, b, c) to the matching query point p (all (M, 3))."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum('ij,ij->i', ab, ap)
    d2 = np.einsum('ij,ij->i', ac, ap)
    d3 = np.einsum('ij,ij->i', ab, bp)
    d4 = np.einsum('ij,ij->i', ac, bp)
    d5 = np.einsum('ij,ij->i', ab, cp)
    d6 = np.einsum('ij,ij->i', ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide='ignore', invalid='ignore'):
        denom = va + vb + vc
        face = a + ab * (vb / denom)[:, None] + ac * (vc / denom)[:, None]
        on_ab = a + ab * (d1 / (d1 - d3))[:, None]
        on_ac = a + ac * (d2 / (d2 - d6))[:, None]
        on_bc = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None]
    # Voronoi regions, lowest priority first so later assignments win.
    regions = [
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), on_bc,
        (vb <= 0) & (d2 >= 0) & (d6 <= 0), on_ac,
        (d6 >= 0) & (d5 <= d6), c,
        (vc <= 0) & (d1 >= 0) & (d3 <= 0), on_ab,
        (d3 >= 0) & (d4 <= d3), b,
        (d1 <= 0) & (d2 <= 0), a,
    ]
    result = face
    for mask, value in zip(regions[::2], regions[1::2]):
        result = np.where(mask[:, None], value, result)
    return result


def _closest_chunk(points, corners, centroids, radii):
    dc = cdist(points, centroids)
    upper = (dc + radii).min(axis=1)
    rows, faces = np.nonzero(dc - radii <= upper[:, None] + 1e-9)
    q = closest_points_on_triangles(points[rows], corners[faces, 0], corners[faces, 1], corners[faces, 2])
    d2 = np.einsum('ij,ij->i', points[rows] - q, points[rows] - q)
    order = np.lexsort((d2, rows))
    rows, faces, q, d2 = rows[order], faces[order], q[order], d2[order]
    first = np.searchsorted(rows, np.arange(len(points)))
    return np.sqrt(d2[first]), q[first], faces[first]


def closest_points(points, mesh, n_jobs=1):
    """
    Exact closest surface point for each query point.

    Triangles are pruned with bounding spheres before the exact
    point-triangle test. Returns (distances, closest points, face indices).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    corners = mesh.corners
    centroids = corners.mean(axis=1)
    radii = np.linalg.norm(corners - centroids[:, None, :], axis=2).max(axis=1)
    chunk = max(1, 200_000 // max(len(corners), 1))
    starts = range(0, len(points), chunk)
    parts = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_closest_chunk)(points[s:s + chunk], corners, centroids, radii) for s in starts
    )
    if not parts:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    distances, closest, faces = zip(*parts)
    return np.concatenate(distances), np.concatenate(closest), np.concatenate(faces)


@dataclass(frozen=True)
class SdfGrid:
    """Dense signed distance samples at nodes origin + index * voxel (mm)."""

    origin: np.ndarray
    voxel: float
    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        values = np.array(self.values, dtype=float).reshape(dims)
        if self.voxel <= 0 or min(dims) < 2:
            raise ContractViolationError("An SDF grid needs a positive voxel and at least 2 nodes per axis.")
        origin.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'values', values)

    @property
    def upper(self):
        return self.origin + (np.array(self.dims) - 1) * self.voxel

    def node(self, i, j, k):
        return self.origin + np.array([i, j, k], dtype=float) * self.voxel

    def node_positions(self):
        axes = [self.origin[a] + np.arange(self.dims[a]) * self.voxel for a in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
        return grid.reshape(-1, 3)


def default_voxel(mesh):
    """Bounding-box diagonal / 150, clamped to [0.25, 2] mm."""
    lo, hi = mesh.bounds()
    return float(np.clip(np.linalg.norm(hi - lo) / 150.0, MIN_DEFAULT_VOXEL, MAX_DEFAULT_VOXEL))


def _grid_layout(lo, hi, voxel, padding_voxels):
    extent = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    dims = np.ceil(extent / voxel).astype(int) + 2 * padding_voxels + 1
    center = 0.5 * (np.asarray(lo, dtype=float) + np.asarray(hi, dtype=float))
    origin = center - 0.5 * (dims - 1) * voxel
    return origin, tuple(int(d) for d in dims)


def _parity_along_axis(corners, origin, voxel, dims, axis):
    """Count (mod 2) crossings of rays cast from every node along +axis."""
    b_axis, c_axis = [a for a in range(3) if a != axis]
    # A tiny irrational offset keeps the lines off shared edges and vertices.
    jitter = voxel * np.array([1.37e-5, 2.71e-5]) * (1 + 0.31 * axis)
    bs = origin[b_axis] + np.arange(dims[b_axis]) * voxel + jitter[0]
    cs = origin[c_axis] + np.arange(dims[c_axis]) * voxel + jitter[1]
    lines = np.stack(np.meshgrid(bs, cs, indexing='ij'), axis=-1).reshape(-1, 2)
    n_axis = dims[axis]

    p0 = corners[:, 0][:, [b_axis, c_axis]]
    p1 = corners[:, 1][:, [b_axis, c_axis]]
    p2 = corners[:, 2][:, [b_axis, c_axis]]
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    usable = np.abs(area) > 1e-12
    p0, p1, p2, area = p0[usable], p1[usable], p2[usable], area[usable]
    h0, h1, h2 = corners[usable, 0, axis], corners[usable, 1, axis], corners[usable, 2, axis]

    def edge(pa, pb, q):
        return (pb[None, :, 0] - pa[None, :, 0]) * (q[:, None, 1] - pa[None, :, 1]) \
            - (pb[None, :, 1] - pa[None, :, 1]) * (q[:, None, 0] - pa[None, :, 0])

    counts = np.zeros((len(lines), n_axis + 1), dtype=np.int64)
    chunk = max(1, 400_000 // max(len(area), 1))
    for start in range(0, len(lines), chunk):
        q = lines[start:start + chunk]
        e0 = edge(p0, p1, q)
        e1 = edge(p1, p2, q)
        e2 = edge(p2, p0, q)
        inside = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
        rows, faces = np.nonzero(inside)
        if rows.size == 0:
            continue
        w0 = e1[rows, faces] / area[faces]
        w1 = e2[rows, faces] / area[faces]
        w2 = e0[rows, faces] / area[faces]
        hit = w0 * h0[faces] + w1 * h1[faces] + w2 * h2[faces]
        # nodes with index < k lie before the crossing
        k = np.clip(np.ceil((hit - origin[axis]) / voxel), 0, n_axis).astype(np.int64)
        np.add.at(counts, (start + rows, np.zeros_like(k)), 1)
        np.add.at(counts, (start + rows, k), -1)
    crossings = np.cumsum(counts, axis=1)[:, :n_axis]
    crossings = crossings.reshape(dims[b_axis], dims[c_axis], n_axis)
    # reorder to (x, y, z)
    order = {b_axis: 0, c_axis: 1, axis: 2}
    crossings = np.transpose(crossings, [order[0], order[1], order[2]])
    return crossings % 2 == 1


def inside_by_ray_parity(mesh, origin, voxel, dims):
    """Majority vote of +x, +y and +z ray parity at every grid node."""
    corners = mesh.corners
    votes = sum(_parity_along_axis(corners, origin, voxel, dims, axis).astype(np.int8) for axis in range(3))
    return votes >= 2


def build_sdf(mesh, voxel=None, padding_voxels=DEFAULT_PADDING_VOXELS, n_jobs=1):
    """
    Voxelize a watertight mesh into a signed distance grid.

    Raises MeshBuildError listing the open edges when the mesh is not closed,
    since the ray-parity sign test needs a closed surface.
    """
    mesh = mesh.cleaned()
    open_edges = mesh.open_edges()
    if open_edges:
        preview = ', '.join(str(e) for e in open_edges[:10])
        raise MeshBuildError(
            f"Mesh is not watertight: {len(open_edges)} open edges ({preview}{', ...' if len(open_edges) > 10 else ''}).",
            open_edges,
        )
    voxel = float(voxel) if voxel is not None else default_voxel(mesh)
    if voxel <= 0:
        raise ContractViolationError("Voxel size must be positive.")
    lo, hi = mesh.bounds()
    origin, dims = _grid_layout(lo, hi, voxel, padding_voxels)
    logger.info("Building SDF grid %s at %.3f mm for %d triangles", dims, voxel, len(mesh.triangles))

    nodes = SdfGrid(origin, voxel, dims, np.zeros(dims)).node_positions()
    distances, _, _ = closest_points(nodes, mesh, n_jobs=n_jobs)
    inside = inside_by_ray_parity(mesh, origin, voxel, dims).reshape(-1)
    values = np.where(inside, -distances, distances).reshape(dims)
    return SdfGrid(origin, voxel, dims, values)


def grid_from_function(fn, lo, hi, voxel, padding_voxels=DEFAULT_PADDING_VOXELS):
    """Sample an analytic signed distance function fn((N, 3)) -> (N,) on a grid."""
    origin, dims = _grid_layout(lo, hi, voxel, padding_voxels)
    nodes = SdfGrid(origin, voxel, dims, np.zeros(dims)).node_positions()
    return SdfGrid(origin, voxel, dims, np.asarray(fn(nodes), dtype=float).reshape(dims))


def _locate(grid, points):
    g = (points - grid.origin) / grid.voxel
    upper = np.array(grid.dims, dtype=float) - 1.0
    q = np.clip(g, 0.0, upper)
    i0 = np.clip(np.floor(q).astype(np.int64), 0, np.array(grid.dims) - 2)
    return g, q, i0, q - i0


def _corner_values(grid, i0):
    v = grid.values
    x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
    return {(dx, dy, dz): v[x + dx, y + dy, z + dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)}


def _trilinear(c, f):
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c00 = c[0, 0, 0] * (1 - fx) + c[1, 0, 0] * fx
    c10 = c[0, 1, 0] * (1 - fx) + c[1, 1, 0] * fx
    c01 = c[0, 0, 1] * (1 - fx) + c[1, 0, 1] * fx
    c11 = c[0, 1, 1] * (1 - fx) + c[1, 1, 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def _cell_gradient(c, f, voxel):
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx = ((1 - fy) * (1 - fz) * (c[1, 0, 0] - c[0, 0, 0]) + fy * (1 - fz) * (c[1, 1, 0] - c[0, 1, 0])
          + (1 - fy) * fz * (c[1, 0, 1] - c[0, 0, 1]) + fy * fz * (c[1, 1, 1] - c[0, 1, 1]))
    gy = ((1 - fx) * (1 - fz) * (c[0, 1, 0] - c[0, 0, 0]) + fx * (1 - fz) * (c[1, 1, 0] - c[1, 0, 0])
          + (1 - fx) * fz * (c[0, 1, 1] - c[0, 0, 1]) + fx * fz * (c[1, 1, 1] - c[1, 0, 1]))
    gz = ((1 - fx) * (1 - fy) * (c[0, 0, 1] - c[0, 0, 0]) + fx * (1 - fy) * (c[1, 0, 1] - c[1, 0, 0])
          + (1 - fx) * fy * (c[0, 1, 1] - c[0, 1, 0]) + fx * fy * (c[1, 1, 1] - c[1, 1, 0]))
    return np.stack([gx, gy, gz], axis=1) / voxel


def sample(grid, p):
    """
    Signed distance at object-frame points (mm).

    Inside the grid this is trilinear interpolation; outside, the value at the
    closest grid-box point plus the distance to the box, so far points keep
    being pulled toward the model.
    """
    p = np.asarray(p, dtype=float)
    points = p.reshape(-1, 3)
    if points.shape[0] == 0:
        return np.zeros(0)
    g, q, i0, f = _locate(grid, points)
    values = _trilinear(_corner_values(grid, i0), f)
    values = values + np.linalg.norm((g - q) * grid.voxel, axis=1)
    return float(values[0]) if p.ndim == 1 else values


def gradient(grid, p, h=None):
    """
    Spatial gradient of `sample` at object-frame points.

    With h=None this is the exact derivative of the trilinear interpolant; on
    a cell face the two one-sided derivatives are averaged. With a step h the
    gradient is taken by central differences of `sample`.
    """
    p = np.asarray(p, dtype=float)
    points = p.reshape(-1, 3)
    if points.shape[0] == 0:
        return np.zeros((0, 3))
    if h is not None:
        grads = np.empty_like(points)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            grads[:, axis] = (np.atleast_1d(sample(grid, points + step))
                              - np.atleast_1d(sample(grid, points - step))) / (2 * h)
        return grads[0] if p.ndim == 1 else grads

    g, q, i0, f = _locate(grid, points)
    grads = _cell_gradient(_corner_values(grid, i0), f, grid.voxel)
    for axis in range(3):
        on_face = (f[:, axis] == 0.0) & (i0[:, axis] > 0)
        if np.any(on_face):
            lower_i0 = i0[on_face].copy()
            lower_i0[:, axis] -= 1
            lower_f = f[on_face].copy()
            lower_f[:, axis] = 1.0
            lower = _cell_gradient(_corner_values(grid, lower_i0), lower_f, grid.voxel)
            grads[on_face, axis] = 0.5 * (grads[on_face, axis] + lower[:, axis])

    outside = np.any(g != q, axis=1)
    if np.any(outside):
        offset = (g[outside] - q[outside]) * grid.voxel
        clamped = offset != 0.0
        direction = offset / np.linalg.norm(offset, axis=1, keepdims=True)
        grads[outside] = np.where(clamped, direction, grads[outside])
    return grads[0] if p.ndim == 1 else grads


def save_grid(grid, path):
    """Write the versioned little-endian grid cache file."""
    header = GRID_MAGIC + struct.pack('<I3id3d', GRID_VERSION, *grid.dims, grid.voxel, *grid.origin)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(grid.values.astype('<f4').tobytes(order='C'))


def load_grid(path):
    with open(path, 'rb') as f:
        blob = f.read()
    if blob[:4] != GRID_MAGIC:
        raise DataError(f"{path} is not an SDF grid cache file.")
    header_size = 4 + struct.calcsize('<I3id3d')
    version, nx, ny, nz, voxel, ox, oy, oz = struct.unpack('<I3id3d', blob[4:header_size])
    if version != GRID_VERSION:
        raise DataError(f"Unsupported SDF cache version {version} in {path}.")
    values = np.frombuffer(blob[header_size:], dtype='<f4')
    if values.size != nx * ny * nz:
        raise DataError(f"Truncated SDF cache file {path}.")
    return SdfGrid((ox, oy, oz), voxel, (nx, ny, nz), values.astype(float).reshape(nx, ny, nz))


def mesh_digest(mesh, voxel, padding_voxels):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.vertices).tobytes())
    digest.update(np.ascontiguousarray(mesh.triangles).tobytes())
    digest.update(struct.pack('<dII', voxel, padding_voxels, GRID_VERSION))
    return digest.hexdigest()


def cached_sdf(mesh, cache_dir, voxel=None, padding_voxels=DEFAULT_PADDING_VOXELS, n_jobs=1):
    """Build the grid once per (mesh, voxel, padding) and reuse the cache file afterwards."""
    voxel = float(voxel) if voxel is not None else default_voxel(mesh)
    path = Path(cache_dir) / f"{mesh_digest(mesh, voxel, padding_voxels)}.sdf"
    if path.exists():
        logger.debug("Loading cached SDF grid from %s", path)
        return load_grid(path)
    grid = build_sdf(mesh, voxel, padding_voxels, n_jobs=n_jobs)
    save_grid(grid, path)
    logger.info("Cached SDF grid at %s", path)
    return grid
