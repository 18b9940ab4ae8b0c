# core/io.py

"""
File formats: PFM and PNG images, JSON/JSONL records, and the on-disk
dataset layout that lets real captures replace the simulator.

Dataset layout::

    camera.json                 intrinsics and baseline
    truth.json                  optional, {"T_ow": 4x4}
    views/<id>/pose.json        {"T_wc": 4x4}
    views/<id>/depth.pfm        depth in mm (or depth.png with depth_scale)
    views/<id>/variance.pfm     optional, mm^2
    views/<id>/mask.png         optional, non-zero = object
"""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataError
from .geometry import CameraModel, Pose
from .nbv import ViewpointCandidate
from .refine import build_measurement_set
from .uncertainty import DepthMap

logger = logging.getLogger(__name__)


def write_pfm(path, array):
    """Single-channel little-endian PFM (rows stored bottom to top)."""
    array = np.asarray(array, dtype='<f4')
    height, width = array.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode('ascii'))
        f.write(np.flipud(array).tobytes())


def read_pfm(path):
    try:
        with open(path, 'rb') as f:
            kind = f.readline().strip()
            dims = f.readline().split()
            scale = float(f.readline().strip())
            data = f.read()
    except OSError as exc:
        raise DataError(f"Cannot read {path}: {exc}") from exc
    if kind not in (b'Pf', b'PF') or len(dims) != 2:
        raise DataError(f"{path} is not a PFM file.")
    width, height = int(dims[0]), int(dims[1])
    channels = 3 if kind == b'PF' else 1
    dtype = '<f4' if scale < 0 else '>f4'
    values = np.frombuffer(data, dtype=dtype)
    if values.size != width * height * channels:
        raise DataError(f"Truncated PFM file {path}.")
    values = values.reshape(height, width, channels)[..., 0]
    return np.flipud(values).astype(float)


def write_png(path, values, bits=8):
    """Write a [0, 1] image as 8-bit (or 16-bit) grayscale PNG."""
    values = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if bits == 16:
        Image.fromarray(np.rint(values * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.rint(values * 255).astype(np.uint8)).save(path)


def read_png(path):
    """Grayscale PNG as float values in [0, 1]."""
    try:
        with Image.open(path) as image:
            array = np.asarray(image)
    except OSError as exc:
        raise DataError(f"Cannot read {path}: {exc}") from exc
    if array.ndim == 3:
        array = array[..., :3].mean(axis=2)
    peak = 65535.0 if array.dtype == np.uint16 or array.max(initial=0) > 255 else 255.0
    return array.astype(float) / peak


def read_depth_png(path, depth_scale):
    """16-bit PNG depth; raw units times depth_scale gives mm, zero means missing."""
    with Image.open(path) as image:
        raw = np.asarray(image).astype(float)
    return raw * depth_scale


def write_json(path, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"Cannot read JSON from {path}: {exc}") from exc


def write_jsonl(path, records):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write('\n')


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def pose_from_json(value):
    try:
        return Pose.from_matrix(np.asarray(value, dtype=float))
    except Exception as exc:
        raise DataError(f"Malformed pose matrix: {exc}") from exc


def write_dataset(directory, camera, acquisitions, truth=None):
    """Store simulated acquisitions in the dataset layout."""
    directory = Path(directory)
    write_json(directory / 'camera.json', camera.to_dict())
    if truth is not None:
        write_json(directory / 'truth.json', {'T_ow': truth.as_matrix().tolist()})
    for shot in acquisitions:
        view = directory / 'views' / f"{shot.view_id:03d}"
        write_json(view / 'pose.json', {'T_wc': shot.T_wc.as_matrix().tolist()})
        write_pfm(view / 'depth.pfm', np.where(shot.depth.valid, shot.depth.depth, 0.0))
        write_pfm(view / 'variance.pfm', np.where(shot.depth.valid, shot.depth.variance, 0.0))
        write_png(view / 'mask.png', shot.mask.astype(float))
    logger.info("Wrote %d views to %s", len(acquisitions), directory)


class DatasetSource:
    """
    Measurement source backed by a dataset directory.

    Pixels with zero or non-finite depth are missing. Without a variance
    image every pixel gets default_sigma^2.
    """

    def __init__(self, directory, default_sigma=0.5, depth_scale=1.0, stride=1):
        self.directory = Path(directory)
        if not (self.directory / 'camera.json').exists():
            raise DataError(f"{self.directory} has no camera.json.")
        try:
            self.camera = CameraModel(**read_json(self.directory / 'camera.json'))
        except TypeError as exc:
            raise DataError(f"Malformed camera.json: {exc}") from exc
        self.default_sigma = default_sigma
        self.depth_scale = depth_scale
        self.stride = stride
        self.views = {}
        for view in sorted((self.directory / 'views').glob('*')):
            if view.is_dir() and (view / 'pose.json').exists():
                self.views[int(view.name)] = view
        if not self.views:
            raise DataError(f"{self.directory} contains no views.")
        truth_path = self.directory / 'truth.json'
        self.truth = pose_from_json(read_json(truth_path)['T_ow']) if truth_path.exists() else None

    def view_pose(self, view_id):
        return pose_from_json(read_json(self.views[view_id] / 'pose.json')['T_wc'])

    def candidates(self):
        return [ViewpointCandidate(view_id, self.view_pose(view_id)) for view_id in sorted(self.views)]

    def depth_map(self, view_id):
        view = self.views.get(view_id)
        if view is None:
            raise DataError(f"Dataset has no view {view_id}.")
        if (view / 'depth.pfm').exists():
            depth = read_pfm(view / 'depth.pfm')
        else:
            depth = read_depth_png(view / 'depth.png', self.depth_scale)
        if (view / 'variance.pfm').exists():
            variance = read_pfm(view / 'variance.pfm')
        else:
            variance = np.full(depth.shape, self.default_sigma ** 2)
        valid = np.isfinite(depth) & (depth > 0) & np.isfinite(variance) & (variance > 0)
        mask = read_png(view / 'mask.png') > 0 if (view / 'mask.png').exists() else np.ones(depth.shape, bool)
        return DepthMap(np.where(valid, depth, 0.0), np.where(valid, variance, np.inf), valid), mask

    def acquire(self, view_id, T_wc=None):
        depth, mask = self.depth_map(view_id)
        return build_measurement_set(depth, mask, self.camera, self.view_pose(view_id), view_id, self.stride)
