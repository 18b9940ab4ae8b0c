# core/tests/test_io.py

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import DataError
from core.geometry import CameraModel, Pose, look_at
from core.io import (DatasetSource, pose_from_json, read_json, read_jsonl, read_pfm, read_png, write_dataset,
                     write_json, write_jsonl, write_pfm, write_png)
from core.sensor import Acquisition
from core.uncertainty import DepthMap

CAMERA = CameraModel(100.0, 100.0, 10.0, 10.0, 21, 21, 50.0)


def block_acquisition(view_id, eye):
    depth = np.zeros((21, 21))
    valid = np.zeros((21, 21), dtype=bool)
    valid[5:15, 4:12] = True
    depth[valid] = np.linspace(400.0, 420.0, valid.sum())
    variance = np.where(valid, 0.75, np.inf)
    mask = np.zeros((21, 21), dtype=bool)
    mask[5:15, 4:10] = True
    return Acquisition(DepthMap(depth, variance, valid), mask, look_at(eye, (0.0, 0.0, 0.0)), view_id)


class ImageFormatTests(SimpleTestCase):
    def test_pfm_keeps_row_order(self):
        values = np.arange(12, dtype=float).reshape(3, 4) + 0.25
        with tempfile.TemporaryDirectory() as tmp:
            write_pfm(Path(tmp) / 'a.pfm', values)
            np.testing.assert_array_equal(read_pfm(Path(tmp) / 'a.pfm'), values)

    def test_truncated_pfm(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'a.pfm'
            write_pfm(path, np.ones((4, 4)))
            path.write_bytes(path.read_bytes()[:-8])
            with self.assertRaises(DataError):
                read_pfm(path)
            path.write_bytes(b'P6\n4 4\n255\n')
            with self.assertRaises(DataError):
                read_pfm(path)

    def test_png_quantizes_to_levels(self):
        values = np.array([[0.0, 0.5, 1.0, 2.0]])
        with tempfile.TemporaryDirectory() as tmp:
            write_png(Path(tmp) / 'a.png', values)
            write_png(Path(tmp) / 'b.png', values, bits=16)
            eight = read_png(Path(tmp) / 'a.png')
            sixteen = read_png(Path(tmp) / 'b.png')
        np.testing.assert_allclose(eight, [[0.0, 128 / 255, 1.0, 1.0]])
        np.testing.assert_allclose(sixteen, [[0.0, 32768 / 65535, 1.0, 1.0]])


class RecordTests(SimpleTestCase):
    def test_json_and_jsonl(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_json(Path(tmp) / 'nested' / 'a.json', {'b': 1, 'a': [1.5, 2]})
            self.assertEqual(read_json(Path(tmp) / 'nested' / 'a.json'), {'a': [1.5, 2], 'b': 1})
            write_jsonl(Path(tmp) / 'r.jsonl', [{'step': 0}, {'step': 1}])
            self.assertEqual(read_jsonl(Path(tmp) / 'r.jsonl'), [{'step': 0}, {'step': 1}])
            (Path(tmp) / 'bad.json').write_text('{"a": ')
            with self.assertRaises(DataError):
                read_json(Path(tmp) / 'bad.json')
            with self.assertRaises(DataError):
                read_json(Path(tmp) / 'missing.json')

    def test_pose_matrices(self):
        pose = Pose.from_xyz_axis_angle([1.0, 2.0, 3.0], [0.3, 0.0, -0.2])
        np.testing.assert_allclose(pose_from_json(pose.as_matrix().tolist()).as_matrix(), pose.as_matrix())
        with self.assertRaises(DataError):
            pose_from_json([[1.0, 0.0], [0.0, 1.0]])


class DatasetTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.shots = [block_acquisition(0, (0.0, -100.0, 400.0)), block_acquisition(7, (100.0, 0.0, 400.0))]
        self.truth = Pose.from_xyz_axis_angle([0.0, 0.0, -12.0], [0.0, 0.0, 0.2])
        write_dataset(self.root, CAMERA, self.shots, self.truth)

    def test_layout(self):
        for name in ('camera.json', 'truth.json', 'views/000/pose.json', 'views/007/depth.pfm',
                     'views/007/variance.pfm', 'views/007/mask.png'):
            self.assertTrue((self.root / name).exists(), name)

    def test_source_reads_back_the_views(self):
        source = DatasetSource(self.root)
        self.assertEqual(source.camera, CAMERA)
        self.assertEqual(sorted(source.views), [0, 7])
        np.testing.assert_allclose(source.truth.as_matrix(), self.truth.as_matrix(), atol=1e-12)
        self.assertEqual([c.id for c in source.candidates()], [0, 7])
        np.testing.assert_allclose(source.view_pose(7).as_matrix(), self.shots[1].T_wc.as_matrix(), atol=1e-12)

        depth, mask = source.depth_map(0)
        np.testing.assert_array_equal(depth.valid, self.shots[0].depth.valid)
        np.testing.assert_array_equal(mask, self.shots[0].mask)
        np.testing.assert_allclose(depth.variance[depth.valid], 0.75)

    def test_acquire_keeps_masked_valid_pixels(self):
        mset = DatasetSource(self.root).acquire(7)
        self.assertEqual(len(mset), 60)
        self.assertEqual(mset.view_id, 7)
        np.testing.assert_allclose(mset.depth_variance, 0.75)
        camera_centre = self.shots[1].T_wc.translation
        distances = np.linalg.norm(mset.points_world - camera_centre, axis=1)
        self.assertTrue(np.all((distances > 399.0) & (distances < 421.0 * 1.1)))

    def test_default_sigma_without_variance(self):
        (self.root / 'views' / '000' / 'variance.pfm').unlink()
        depth, _ = DatasetSource(self.root, default_sigma=2.0).depth_map(0)
        np.testing.assert_allclose(depth.variance[depth.valid], 4.0)

    def test_unknown_view(self):
        with self.assertRaises(DataError):
            DatasetSource(self.root).acquire(3)

    def test_missing_camera_or_views(self):
        (self.root / 'camera.json').unlink()
        with self.assertRaises(DataError):
            DatasetSource(self.root)
        with tempfile.TemporaryDirectory() as tmp:
            write_json(Path(tmp) / 'camera.json', CAMERA.to_dict())
            with self.assertRaises(DataError):
                DatasetSource(tmp)
