# core/config.py

"""
Run configuration and scene files.

Both are YAML documents validated against JSON schemas. RunConfig defaults
come from settings.ACTIVE_POSE, so a run is fully described by its config
file, the command-line overrides and the seed.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np
import yaml
from django.conf import settings

from .calib import ResponseCurve
from .exceptions import ConfigurationError
from .geometry import CameraModel, Pose, look_at
from .io import read_json
from .meshes import box, procedural_mesh
from .nbv import POLICIES, StopCriteria
from .refine import RefineOptions
from .render import MATERIAL_PRESETS, BsdfParams, PointLight, PredictionSettings, SceneDescription, SceneObject
from .sdf import load_mesh

logger = logging.getLogger(__name__)

_NUMBER = {'type': 'number'}
_VEC3 = {'type': 'array', 'items': _NUMBER, 'minItems': 3, 'maxItems': 3}

RUN_CONFIG_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'properties': {
        'seed': {'type': 'integer'},
        'seeds': {'type': 'integer', 'minimum': 1},
        'scene': {'type': ['string', 'null']},
        'kind': {'type': 'string'},
        'kinds': {'type': 'array', 'items': {'type': 'string'}},
        'material': {'enum': sorted(MATERIAL_PRESETS)},
        'object_id': {'type': 'integer', 'minimum': 0},
        'mode': {'enum': ['active', 'passive']},
        'policies': {'type': 'array', 'items': {'enum': list(POLICIES)}, 'minItems': 1},
        'max_views': {'type': 'integer', 'minimum': 1},
        'entropy_threshold': _NUMBER,
        'candidates': {'type': 'integer', 'minimum': 1},
        'candidate_radius': {'type': 'number', 'exclusiveMinimum': 0},
        'perturb_trans': {'type': 'number', 'minimum': 0},
        'perturb_rot_deg': {'type': 'number', 'minimum': 0},
        'noise': {'type': 'boolean'},
        'outlier_fraction': {'type': 'number', 'minimum': 0, 'maximum': 1},
        'stride': {'type': 'integer', 'minimum': 1},
        'passive_views': {'type': 'array', 'items': {'type': 'integer', 'minimum': 1}},
        'voxel': {'type': ['number', 'null'], 'exclusiveMinimum': 0},
        'clutter': {'type': 'boolean'},
        'n_jobs': {'type': 'integer'},
        'response': {'type': ['string', 'null']},
        'out': {'type': 'string'},
        'thresholds': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'tau_I': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1},
                'tau_sigma': {'type': 'number', 'exclusiveMinimum': 0},
                'sigma_img': {'type': 'number', 'exclusiveMinimum': 0},
                'patch': {'type': 'integer', 'minimum': 3},
            },
        },
        'pattern': {
            'type': 'object', 'additionalProperties': False,
            'properties': {'strong': _NUMBER, 'weak': _NUMBER, 'seed': {'type': 'integer'},
                           'bounces': {'type': 'integer', 'minimum': 1}},
        },
        'refine': {
            'type': 'object', 'additionalProperties': False,
            'properties': {'max_iters': {'type': 'integer', 'minimum': 0},
                           'outlier_gate': {'type': ['number', 'null'], 'exclusiveMinimum': 0},
                           'gauge_tol': {'type': 'number', 'exclusiveMinimum': 0}},
        },
        'camera': {
            'type': 'object', 'additionalProperties': False,
            'properties': {'width': {'type': 'integer'}, 'height': {'type': 'integer'},
                           'fx': _NUMBER, 'fy': _NUMBER, 'baseline': _NUMBER},
        },
    },
}

SCENE_SCHEMA = {
    'type': 'object',
    'required': ['camera', 'camera_pose', 'light', 'objects'],
    'additionalProperties': False,
    'properties': {
        'camera': {
            'type': 'object',
            'required': ['fx', 'fy', 'cx', 'cy', 'width', 'height', 'baseline'],
            'properties': {k: _NUMBER for k in ('fx', 'fy', 'cx', 'cy', 'width', 'height', 'baseline')},
        },
        'camera_pose': {
            'type': 'object',
            'oneOf': [{'required': ['xyz', 'axis_angle']}, {'required': ['eye', 'target']}],
            'properties': {'xyz': _VEC3, 'axis_angle': _VEC3, 'eye': _VEC3, 'target': _VEC3},
        },
        'light': {
            'type': 'object',
            'required': ['position', 'intensity'],
            'properties': {'position': _VEC3, 'intensity': {'type': 'number', 'exclusiveMinimum': 0},
                           'frame': {'enum': ['camera', 'world']}},
        },
        'ambient': {'type': 'number', 'minimum': 0},
        'exposure': {'type': 'number', 'exclusiveMinimum': 0},
        'target': {'type': 'integer', 'minimum': 0},
        'objects': {
            'type': 'array',
            'minItems': 1,
            'items': {
                'type': 'object',
                'required': ['pose'],
                'oneOf': [{'required': ['mesh']}, {'required': ['procedural']}],
                'properties': {
                    'name': {'type': 'string'},
                    'mesh': {'type': 'string'},
                    'procedural': {'type': 'string'},
                    'size': {'type': 'array', 'items': _NUMBER},
                    'pose': {'type': 'object', 'required': ['xyz', 'axis_angle'],
                             'properties': {'xyz': _VEC3, 'axis_angle': _VEC3}},
                    'material': {'enum': sorted(MATERIAL_PRESETS)},
                    'bsdf': {
                        'type': 'object',
                        'properties': {k: {'type': 'number', 'minimum': 0, 'maximum': 1}
                                       for k in ('base_color', 'metallic', 'roughness', 'specular')},
                    },
                },
            },
        },
    },
}


def _validate(data, schema, what):
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        location = '/'.join(str(p) for p in exc.absolute_path) or '<root>'
        raise ConfigurationError(f"Invalid {what} at {location}: {exc.message}") from exc


def read_yaml(path):
    try:
        with open(path) as f:
            return yaml.safe_load(f) or {}
    except OSError as exc:
        raise ConfigurationError(f"Cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path} is not valid YAML: {exc}") from exc


def write_yaml(path, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(data, f, sort_keys=False, default_flow_style=None)


def defaults():
    return dict(getattr(settings, 'ACTIVE_POSE', {}))


@dataclass
class RunConfig:
    """Everything an experiment run depends on besides code."""

    seed: int = 0
    seeds: int = 20
    scene: str = None
    kind: str = 'l-bracket'
    kinds: list = field(default_factory=list)
    material: str = 'glossy'
    object_id: int = 0
    mode: str = 'active'
    policies: list = field(default_factory=lambda: ['nbv', 'random', 'max-distance'])
    max_views: int = 5
    entropy_threshold: float = -10.0
    candidates: int = 40
    candidate_radius: float = 350.0
    perturb_trans: float = 30.0
    perturb_rot_deg: float = 30.0
    noise: bool = True
    outlier_fraction: float = 0.0
    stride: int = 2
    passive_views: list = field(default_factory=lambda: [1, 2, 4])
    voxel: float = None
    clutter: bool = True
    n_jobs: int = 1
    response: str = None
    out: str = 'runs/default'
    thresholds: dict = field(default_factory=dict)
    pattern: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)
    camera: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        _validate(data, RUN_CONFIG_SCHEMA, 'run config')
        base = defaults()
        known = {f.name for f in fields(cls)}
        merged = {k: v for k, v in base.items() if k in known}
        for key, value in data.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        return cls(**merged)

    @classmethod
    def from_file(cls, path, overrides=None):
        data = read_yaml(path) if path else {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must contain a mapping.")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    @property
    def all_kinds(self):
        return list(self.kinds) or [self.kind]

    def prediction_settings(self):
        t, p = self.thresholds, self.pattern
        return PredictionSettings(
            tau_I=t.get('tau_I', 0.7), tau_sigma=t.get('tau_sigma', 2.0), sigma_img=t.get('sigma_img', 0.01),
            patch=t.get('patch', 7), strong=p.get('strong', 1.0), weak=p.get('weak', 0.2),
            pattern_seed=p.get('seed', 0), bounces=p.get('bounces', 3),
        )

    def refine_options(self):
        return RefineOptions(max_iters=self.refine.get('max_iters', 50),
                             outlier_gate=self.refine.get('outlier_gate'),
                             gauge_tol=self.refine.get('gauge_tol', 1e-2))

    def stop_criteria(self):
        return StopCriteria(self.entropy_threshold, self.max_views)

    def camera_model(self):
        c = self.camera
        width, height = int(c.get('width', 128)), int(c.get('height', 96))
        return CameraModel(float(c.get('fx', 170.0)), float(c.get('fy', 170.0)), (width - 1) / 2.0,
                           (height - 1) / 2.0, width, height, float(c.get('baseline', 60.0)))

    def response_curve(self):
        if not self.response:
            return ResponseCurve.linear()
        return ResponseCurve.from_dict(read_json(self.response))


def _pose(entry):
    return Pose.from_xyz_axis_angle(entry['xyz'], entry['axis_angle'])


def _object_mesh(entry, base_dir):
    if 'mesh' in entry:
        path = Path(entry['mesh'])
        return load_mesh(path if path.is_absolute() else Path(base_dir) / path)
    kind = entry['procedural']
    if kind == 'box':
        return box(tuple(entry.get('size', (20.0, 20.0, 20.0))))
    return procedural_mesh(kind)


def scene_from_dict(data, base_dir='.'):
    """Build a SceneDescription from a validated scene document."""
    _validate(data, SCENE_SCHEMA, 'scene')
    c = data['camera']
    try:
        camera = CameraModel(float(c['fx']), float(c['fy']), float(c['cx']), float(c['cy']),
                             int(c['width']), int(c['height']), float(c['baseline']))
    except ValueError as exc:
        raise ConfigurationError(f"Invalid camera: {exc}") from exc
    pose = data['camera_pose']
    camera_pose = _pose(pose) if 'xyz' in pose else look_at(pose['eye'], pose['target'])
    light = data['light']
    objects = []
    for entry in data['objects']:
        if 'bsdf' in entry:
            bsdf = BsdfParams(**{**BsdfParams().to_dict(), **entry['bsdf']})
        else:
            bsdf = MATERIAL_PRESETS[entry.get('material', 'matte')]
        name = entry.get('name') or entry.get('procedural') or Path(entry['mesh']).stem
        objects.append(SceneObject(_object_mesh(entry, base_dir), _pose(entry['pose']), bsdf, name))
    target = int(data.get('target', 0))
    if target >= len(objects):
        raise ConfigurationError(f"Scene target {target} does not name one of its {len(objects)} objects.")
    return SceneDescription(
        objects, PointLight(light['position'], float(light['intensity']), light.get('frame', 'camera')),
        camera, camera_pose, float(data.get('ambient', 0.0)), float(data.get('exposure', 1.0)), target,
    )


def load_scene(path):
    path = Path(path)
    return scene_from_dict(read_yaml(path), path.parent)


def pose_entry(pose):
    return {'xyz': [round(float(v), 9) for v in pose.translation],
            'axis_angle': [round(float(v), 9) for v in np.asarray(pose.axis_angle())]}
