# core/render.py

"""
Structured-light scene simulator.

A point light (the projector) illuminates triangle-mesh objects with a
reduced principled BSDF. Rays are traced on the CPU with a vectorized
Moller-Trumbore test; multi-path transport follows the mirror direction for
up to `bounces` surface interactions. Geometry is traced once into a
PathCache and can then be shaded repeatedly (different materials, light
intensities or projector patterns) without re-intersecting.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ContractViolationError
from .geometry import Pose
from .uncertainty import DEFAULT_PATCH, DEFAULT_SIGMA_IMG, DepthMap, IntensityImage, score_depth_map

logger = logging.getLogger(__name__)

MIN_ROUGHNESS = 0.02
RAY_EPSILON = 1e-3  # mm, offset of secondary ray origins off the surface
RAY_CHUNK = 300_000  # rays x triangles evaluated at once
DEFAULT_BOUNCES = 3
PATTERN_STRIP_WIDTH = 2


@dataclass(frozen=True)
class BsdfParams:
    """Grayscale reduced principled BSDF; every coefficient in [0, 1]."""

    base_color: float = 0.5
    metallic: float = 0.5
    roughness: float = 0.5
    specular: float = 0.5

    def __post_init__(self):
        for name in ('base_color', 'metallic', 'roughness', 'specular'):
            value = float(getattr(self, name))
            if not (0.0 <= value <= 1.0) or not np.isfinite(value):
                raise ContractViolationError(f"BSDF {name} must lie in [0, 1], got {value}.")
            object.__setattr__(self, name, value)

    @property
    def alpha(self):
        return max(self.roughness, MIN_ROUGHNESS) ** 2

    def as_array(self):
        return np.array([self.base_color, self.metallic, self.roughness, self.specular])

    @classmethod
    def from_array(cls, values):
        return cls(*np.clip(np.asarray(values, dtype=float), 0.0, 1.0))

    def to_dict(self):
        return {'base_color': self.base_color, 'metallic': self.metallic,
                'roughness': self.roughness, 'specular': self.specular}


MATERIAL_PRESETS = {
    'matte': BsdfParams(0.7, 0.0, 0.8, 0.5),
    'glossy': BsdfParams(0.6, 0.6, 0.25, 0.5),
    'chrome': BsdfParams(0.9, 0.95, 0.05, 0.5),
}


@dataclass(frozen=True)
class PointLight:
    """Isotropic point emitter. With frame='camera' the position moves with the camera."""

    position: np.ndarray
    intensity: float
    frame: str = 'camera'

    def __post_init__(self):
        if not self.intensity > 0:
            raise ContractViolationError("Light intensity must be positive.")
        if self.frame not in ('camera', 'world'):
            raise ContractViolationError(f"Light frame must be 'camera' or 'world', got {self.frame!r}.")
        position = np.array(self.position, dtype=float).reshape(3)
        position.setflags(write=False)
        object.__setattr__(self, 'position', position)

    def world_position(self, T_wc):
        return T_wc.apply(self.position) if self.frame == 'camera' else self.position.copy()


@dataclass(frozen=True)
class SceneObject:
    mesh: object
    pose: Pose
    bsdf: BsdfParams
    name: str = ''


@dataclass(frozen=True)
class SceneDescription:
    """Objects, light and camera; `target` indexes the object of interest."""

    objects: tuple
    light: PointLight
    camera: object
    camera_pose: Pose
    ambient: float = 0.0
    exposure: float = 1.0
    target: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        if self.ambient < 0:
            raise ContractViolationError("Ambient radiance must be non-negative.")
        if self.exposure <= 0:
            raise ContractViolationError("Exposure time must be positive.")
        if self.objects and not (0 <= self.target < len(self.objects)):
            raise ContractViolationError("Target index does not name a scene object.")

    @property
    def target_object(self):
        return self.objects[self.target]

    def with_camera_pose(self, T_wc):
        return replace(self, camera_pose=T_wc)

    def with_object_pose(self, index, T_wo):
        objects = list(self.objects)
        objects[index] = replace(objects[index], pose=T_wo)
        return replace(self, objects=tuple(objects))

    def with_materials(self, params):
        """Assign one BsdfParams to every object, or a list with one per object."""
        if isinstance(params, BsdfParams):
            params = [params] * len(self.objects)
        return replace(self, objects=tuple(replace(o, bsdf=p) for o, p in zip(self.objects, params)))

    def with_light_intensity(self, intensity):
        return replace(self, light=replace(self.light, intensity=intensity))

    def only(self, index):
        return replace(self, objects=(self.objects[index],), target=0)

    def light_world(self, T_wc=None):
        return self.light.world_position(T_wc or self.camera_pose)


@dataclass(frozen=True)
class RadianceImage:
    """Linear radiance per pixel with first-hit depth (mm), hit flags and object ids (-1 = miss)."""

    values: np.ndarray
    depth: np.ndarray
    hit: np.ndarray
    object_ids: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise ContractViolationError("Radiance must be finite and non-negative.")
        object.__setattr__(self, 'values', values)
        if self.object_ids is None:
            object.__setattr__(self, 'object_ids', np.where(self.hit, 0, -1))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def mask(self, index):
        return self.object_ids == index


# --- BSDF -------------------------------------------------------------------

def _dot(a, b):
    return np.einsum('...i,...i->...', a, b)


def _schlick(cos_theta, f0, f90):
    return f0 + (f90 - f0) * (1.0 - np.clip(cos_theta, 0.0, 1.0)) ** 5


def _fresnel_terms(base, metallic, specular):
    f0 = (1.0 - metallic) * 0.08 * specular + metallic * base
    # f90 -> 0 with f0 so the zero-specular dielectric is exactly Lambertian
    return f0, np.minimum(1.0, 50.0 * f0)


def _bsdf(base, metallic, roughness, specular, n, wi, wo):
    nl = _dot(n, wi)
    nv = _dot(n, wo)
    above = (nl > 0) & (nv > 0)
    nl = np.where(above, nl, 1.0)
    nv = np.where(above, nv, 1.0)
    h = wi + wo
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    nh = np.clip(_dot(n, h), 0.0, 1.0)
    vh = np.clip(_dot(wo, h), 0.0, 1.0)

    alpha = np.maximum(roughness, MIN_ROUGHNESS) ** 2
    a2 = alpha * alpha
    D = a2 / (np.pi * (nh * nh * (a2 - 1.0) + 1.0) ** 2)

    def smith_g1(x):
        return 2.0 * x / (x + np.sqrt(a2 + (1.0 - a2) * x * x))

    f0, f90 = _fresnel_terms(base, metallic, specular)
    specular_lobe = D * smith_g1(nl) * smith_g1(nv) * _schlick(vh, f0, f90) / (4.0 * nl * nv)
    diffuse = (1.0 - metallic) * base / np.pi * (1.0 - _schlick(nl, f0, f90)) * (1.0 - _schlick(nv, f0, f90))
    return np.where(above, diffuse + specular_lobe, 0.0)


def eval_bsdf(params, n, w_in, w_out):
    """
    BRDF value (1/sr) of the reduced principled model.

    Accepts single unit vectors or (N, 3) arrays. Directions below the
    horizon on either side give 0.
    """
    value = _bsdf(params.base_color, params.metallic, params.roughness, params.specular,
                  np.asarray(n, dtype=float), np.asarray(w_in, dtype=float), np.asarray(w_out, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def mirror_weight(base, metallic, roughness, specular, cos_out):
    """Fraction of radiance carried along the mirror direction at one interaction."""
    f0, f90 = _fresnel_terms(base, metallic, specular)
    return _schlick(cos_out, f0, f90) * (1.0 - np.maximum(roughness, MIN_ROUGHNESS) ** 2)


def reflect(d, n):
    return d - 2.0 * _dot(d, n)[..., None] * n


# --- ray casting --------------------------------------------------------------

@dataclass(frozen=True)
class _ObjectGeometry:
    corners: np.ndarray
    normals: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def scene_geometry(scene):
    geometry = []
    for obj in scene.objects:
        mesh = obj.mesh.transformed(obj.pose)
        corners = mesh.corners
        lo = corners.reshape(-1, 3).min(axis=0) - 1e-6
        hi = corners.reshape(-1, 3).max(axis=0) + 1e-6
        geometry.append(_ObjectGeometry(corners, mesh.face_normals(), lo, hi))
    return geometry


def _box_hits(origins, dirs, lo, hi, t_max):
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    near = np.fmax.reduce(np.fmin(t1, t2), axis=1)
    far = np.fmin.reduce(np.fmax(t1, t2), axis=1)
    return (far >= np.maximum(near, 0.0)) & (near <= t_max)


def _moller_trumbore(origins, dirs, corners, t_min):
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum('fj,rfj->rf', e1, pvec)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv_det = 1.0 / det
        tvec = origins[:, None, :] - v0[None, :, :]
        u = np.einsum('rfj,rfj->rf', tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum('rj,rfj->rf', dirs, qvec) * inv_det
        t = np.einsum('fj,rfj->rf', e2, qvec) * inv_det
    valid = (np.abs(det) > 1e-12) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_min)
    t = np.where(valid, t, np.inf)
    face = np.argmin(t, axis=1)
    return t[np.arange(len(t)), face], face


def intersect(geometry, origins, dirs, t_min=1e-6, t_max=np.inf):
    """Closest hit along each ray: (t, object index, face index); misses have t = inf."""
    count = len(origins)
    best_t = np.full(count, np.inf)
    best_obj = np.full(count, -1, dtype=np.int64)
    best_face = np.full(count, -1, dtype=np.int64)
    for index, geom in enumerate(geometry):
        candidates = np.nonzero(_box_hits(origins, dirs, geom.lo, geom.hi, t_max))[0]
        chunk = max(1, RAY_CHUNK // max(len(geom.corners), 1))
        for start in range(0, len(candidates), chunk):
            rays = candidates[start:start + chunk]
            t, face = _moller_trumbore(origins[rays], dirs[rays], geom.corners, t_min)
            closer = (t < best_t[rays]) & (t <= t_max)
            rays = rays[closer]
            best_t[rays] = t[closer]
            best_obj[rays] = index
            best_face[rays] = face[closer]
    return best_t, best_obj, best_face


def _occluded(geometry, points, light):
    to_light = light[None, :] - points
    t, _, _ = intersect(geometry, points, to_light, t_min=1e-6, t_max=1.0 - 1e-6)
    return np.isfinite(t)


@dataclass(frozen=True)
class PathLevel:
    """One surface interaction for a subset of pixels.

    `parent` indexes the previous level's arrays (None on the first level).
    """

    pixels: np.ndarray
    parent: np.ndarray
    object_ids: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    w_out: np.ndarray
    w_in: np.ndarray
    dist2: np.ndarray
    lit: np.ndarray


@dataclass(frozen=True)
class PathCache:
    """Traced geometry of one view, reusable across shading calls."""

    width: int
    height: int
    camera_pose: Pose
    light: np.ndarray
    depth: np.ndarray
    object_ids: np.ndarray
    levels: list = field(default_factory=list)

    @property
    def hit(self):
        return self.object_ids >= 0


def trace_paths(scene, bounces=DEFAULT_BOUNCES, camera_pose=None, light=None, shadows=True, geometry=None):
    """
    Trace primary rays and their mirror-bounce chains for every pixel.

    `light` overrides the world light position (used for the right stereo eye,
    which shares the projector with the left eye).
    """
    if bounces < 1:
        raise ContractViolationError("At least one bounce is required.")
    cam = scene.camera
    T_wc = camera_pose or scene.camera_pose
    light = np.asarray(light if light is not None else scene.light_world(T_wc), dtype=float)
    geometry = geometry if geometry is not None else scene_geometry(scene)

    us, vs = cam.pixel_grid()
    dirs = T_wc.rotate(cam.bearings(us.ravel(), vs.ravel()))
    origins = np.broadcast_to(T_wc.translation, dirs.shape).copy()
    # bearings have unit z, so t along them is the camera-frame depth
    t, obj, face = intersect(geometry, origins, dirs)
    hit = np.isfinite(t)
    depth = np.where(hit, t, np.inf).reshape(cam.height, cam.width)
    object_ids = obj.reshape(cam.height, cam.width)

    levels = []
    pixels = np.nonzero(hit)[0]
    parent = None
    points = origins[pixels] + t[pixels, None] * dirs[pixels]
    d = dirs[pixels] / np.linalg.norm(dirs[pixels], axis=1, keepdims=True)
    obj, face = obj[pixels], face[pixels]
    for level in range(bounces):
        if len(pixels) == 0:
            break
        normals = np.empty_like(points)
        for index, geom in enumerate(geometry):
            sel = obj == index
            normals[sel] = geom.normals[face[sel]]
        normals = np.where((_dot(normals, d) > 0)[:, None], -normals, normals)
        to_light = light[None, :] - points
        dist2 = _dot(to_light, to_light)
        w_in = to_light / np.sqrt(dist2)[:, None]
        lifted = points + RAY_EPSILON * normals
        lit = ~_occluded(geometry, lifted, light) if shadows else np.ones(len(points), dtype=bool)
        levels.append(PathLevel(pixels, parent, obj, points, normals, -d, w_in, dist2, lit))
        if level + 1 == bounces:
            break
        d = reflect(d, normals)
        t2, obj2, face2 = intersect(geometry, lifted, d)
        keep = np.nonzero(np.isfinite(t2))[0]
        pixels, parent = pixels[keep], keep
        points = lifted[keep] + t2[keep, None] * d[keep]
        d, obj, face = d[keep], obj2[keep], face2[keep]

    return PathCache(cam.width, cam.height, T_wc, light, depth, object_ids, levels)


def _material_table(scene):
    table = np.array([o.bsdf.as_array() for o in scene.objects]).reshape(-1, 4)
    return table[:, 0], table[:, 1], table[:, 2], table[:, 3]


def shade(cache, scene, intensity=None, ambient=None):
    """
    Radiance of a traced view; returns (single-path, multi-path) images.

    `intensity` is the light intensity, either a scalar or a callable mapping
    world points to per-point intensity (projector patterns). Defaults to the
    scene light.
    """
    base, metallic, roughness, specular = _material_table(scene)
    ambient = scene.ambient if ambient is None else ambient
    intensity = scene.light.intensity if intensity is None else intensity
    single = np.zeros(cache.width * cache.height)
    multi = np.zeros_like(single)
    throughput = None
    previous = None
    for k, level in enumerate(cache.levels):
        o = level.object_ids
        m = (base[o], metallic[o], roughness[o], specular[o])
        f = _bsdf(*m, level.normals, level.w_in, level.w_out)
        cos_in = np.clip(_dot(level.normals, level.w_in), 0.0, None)
        power = intensity(level.points) if callable(intensity) else intensity
        radiance = f * power / level.dist2 * cos_in * level.lit + ambient * m[0]
        if k == 0:
            throughput = np.ones(len(level.pixels))
            single[level.pixels] = radiance
        else:
            pm = previous
            weight = mirror_weight(*pm['material'], _dot(pm['normals'], pm['w_out']))
            throughput = (pm['throughput'] * weight)[level.parent]
        multi[level.pixels] += throughput * radiance
        previous = {'material': m, 'normals': level.normals, 'w_out': level.w_out, 'throughput': throughput}
    shape = (cache.height, cache.width)
    return single.reshape(shape), multi.reshape(shape)


def _radiance_image(values, cache):
    return RadianceImage(values, cache.depth, cache.hit, cache.object_ids)


def render_pair(scene, bounces=DEFAULT_BOUNCES, cache=None):
    """Single-path and multi-path radiance from one trace."""
    cache = cache or trace_paths(scene, bounces)
    single, multi = shade(cache, scene)
    return _radiance_image(single, cache), _radiance_image(multi, cache)


def render_radiance(scene, mode='multi', bounces=DEFAULT_BOUNCES):
    """Render the scene from its camera; single-path mode forces one bounce."""
    if mode not in ('single', 'multi'):
        raise ContractViolationError(f"Unknown render mode {mode!r}.")
    if bounces < 1:
        raise ContractViolationError("At least one bounce is required.")
    cache = trace_paths(scene, 1 if mode == 'single' else bounces)
    single, multi = shade(cache, scene)
    return _radiance_image(single if mode == 'single' else multi, cache)


def render_image(rad, response, exposure):
    """Pixel intensity g(E * dt), clamped to [0, 1]."""
    if exposure <= 0:
        raise ContractViolationError("Exposure time must be positive.")
    return IntensityImage(response.to_intensity(rad.values * exposure))


# --- structured light ---------------------------------------------------------

def projector_bits(points, light, projector_rotation, cam, seed, strip_width=PATTERN_STRIP_WIDTH):
    """
    Binary pattern value at world points for a projector at `light`.

    The projector shares the camera's intrinsics and orientation; its columns
    are grouped into strips of `strip_width` pixels with seeded random bits.
    Points behind the projector get 0.
    """
    local = (points - light) @ projector_rotation
    in_front = local[:, 2] > 1e-9
    with np.errstate(divide='ignore', invalid='ignore'):
        column = cam.fx * local[:, 0] / local[:, 2] + cam.cx
    margin = cam.width
    n_strips = (cam.width + 2 * margin) // strip_width + 1
    bits = np.random.default_rng(seed).integers(0, 2, size=n_strips)
    strip = np.floor((np.where(in_front, column, -margin - 1) + margin) / strip_width).astype(np.int64)
    inside = in_front & (strip >= 0) & (strip < n_strips)
    return np.where(inside, bits[np.clip(strip, 0, n_strips - 1)], 0)


@dataclass(frozen=True)
class PatternPair:
    left: IntensityImage
    right: IntensityImage
    disparity: np.ndarray


def _pattern_image(cache, scene, response, strong, weak, seed, rotation):
    cam = scene.camera

    def intensity(points):
        return np.where(projector_bits(points, cache.light, rotation, cam, seed) == 1, strong, weak)

    _, multi = shade(cache, scene, intensity=intensity)
    return render_image(RadianceImage(multi, cache.depth, cache.hit, cache.object_ids), response, scene.exposure)


def pattern_images(scene, left_cache, right_cache, response, strong, weak, seed):
    if not strong > weak > 0:
        raise ContractViolationError("Pattern intensities need strong > weak > 0.")
    rotation = left_cache.camera_pose.rotation
    left = _pattern_image(left_cache, scene, response, strong, weak, seed, rotation)
    right = _pattern_image(right_cache, scene, response, strong, weak, seed, rotation)
    with np.errstate(divide='ignore'):
        disparity = np.where(left_cache.hit, scene.camera.focal_baseline / left_cache.depth, np.nan)
    return PatternPair(left, right, disparity)


def stereo_caches(scene, bounces=DEFAULT_BOUNCES):
    """Left and right eye traces sharing one projector position."""
    T_wc = scene.camera_pose
    light = scene.light_world(T_wc)
    geometry = scene_geometry(scene)
    left = trace_paths(scene, bounces, T_wc, light, geometry=geometry)
    right = trace_paths(scene, bounces, scene.camera.right_eye(T_wc), light, geometry=geometry)
    return left, right


def synthesize_pattern_pair(scene, response, strong_intensity, weak_intensity, pattern_seed,
                            bounces=DEFAULT_BOUNCES):
    """Multi-path pattern images of both stereo eyes plus the left-eye disparity map."""
    left, right = stereo_caches(scene, bounces)
    return pattern_images(scene, left, right, response, strong_intensity, weak_intensity, pattern_seed)


def predict_missing_mask(single, multi, tau_I):
    """Pixels whose direct share of the radiance is below tau_I (or with no radiance at all)."""
    if single.values.shape != multi.values.shape:
        raise ContractViolationError("Single- and multi-path images must have the same size.")
    if not (0.0 < tau_I <= 1.0):
        raise ContractViolationError("tau_I must lie in (0, 1].")
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = single.values / multi.values
    return (multi.values < 1e-9) | (ratio < tau_I)


@dataclass(frozen=True)
class PredictionSettings:
    """Thresholds and pattern settings of the depth prediction pipeline."""

    tau_I: float = 0.7
    tau_sigma: float = 2.0
    sigma_img: float = DEFAULT_SIGMA_IMG
    patch: int = DEFAULT_PATCH
    strong: float = 1.0
    weak: float = 0.2
    pattern_seed: int = 0
    bounces: int = DEFAULT_BOUNCES
    # When set, every visible pixel gets this depth stddev (mm) and nothing is predicted missing.
    constant_sigma: float = None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def predict_depth_map(scene, T_wo, T_wc, settings, response):
    """
    Depth map the sensor is expected to return for the target object.

    The target is placed at the pose hypothesis and the scene is viewed from
    T_wc. Pixels are missing when the direct share of the radiance is low
    (inter-reflections) or the predicted depth stddev exceeds tau_sigma.
    `strong` and `weak` scale the scene light intensity.
    """
    scene = scene.with_object_pose(scene.target, T_wo).with_camera_pose(T_wc)
    cam = scene.camera
    if settings.constant_sigma is not None:
        cache = trace_paths(scene, 1, shadows=False)
        on_target = cache.object_ids == scene.target
        if not on_target.any():
            return DepthMap.invalid(cam.height, cam.width, low_visibility=True)
        variance = np.full(on_target.shape, settings.constant_sigma ** 2)
        depth = np.where(on_target, cache.depth, 0.0)
        return DepthMap(depth, variance, on_target, info={'target_pixels': int(on_target.sum())})

    left, right = stereo_caches(scene, settings.bounces)
    on_target = left.object_ids == scene.target
    if not on_target.any():
        return DepthMap.invalid(cam.height, cam.width, low_visibility=True)

    single, multi = shade(left, scene)
    missing = predict_missing_mask(_radiance_image(single, left), _radiance_image(multi, left), settings.tau_I)
    intensity = scene.light.intensity
    pair = pattern_images(scene, left, right, response, settings.strong * intensity, settings.weak * intensity,
                          settings.pattern_seed)
    depth = DepthMap(np.where(on_target, left.depth, 1.0), np.ones(on_target.shape), on_target)
    scored = score_depth_map(pair.left, pair.right, depth, cam, settings.patch, settings.sigma_img,
                             tau_sigma=settings.tau_sigma)
    valid = scored.valid & ~missing
    info = {
        'target_pixels': int(on_target.sum()),
        'interreflection_missing': int((missing & on_target).sum()),
        'uncertainty_missing': int((on_target & ~scored.valid).sum()),
    }
    logger.debug("Predicted %d valid of %d target pixels", int(valid.sum()), info['target_pixels'])
    return DepthMap(scored.depth, scored.variance, valid, info=info)


def object_visibility(scene, index=None):
    """
    Fraction of an object's pixels that stay visible with the rest of the scene present.

    Returns 0 when the object is outside the view entirely.
    """
    index = scene.target if index is None else index
    full = trace_paths(scene, 1, shadows=False).object_ids == index
    alone = trace_paths(scene.only(index), 1, shadows=False).object_ids == 0
    total = int(alone.sum())
    return float(full.sum()) / total if total else 0.0
