# core/tests/test_config.py

import tempfile
from pathlib import Path

import numpy as np
import yaml
from django.test import SimpleTestCase, override_settings

from core.config import RunConfig, load_scene, pose_entry, read_yaml, scene_from_dict, write_yaml
from core.exceptions import ConfigurationError, DataError
from core.geometry import Pose
from core.harness import generate_benchmark_scene
from core.io import write_json
from core.meshes import box
from core.sdf import save_mesh

SCENE = {
    'camera': {'fx': 100.0, 'fy': 100.0, 'cx': 31.5, 'cy': 23.5, 'width': 64, 'height': 48, 'baseline': 50.0},
    'camera_pose': {'eye': [0.0, -50.0, 300.0], 'target': [0.0, 0.0, 0.0]},
    'light': {'position': [30.0, 0.0, 0.0], 'intensity': 5e5},
    'objects': [
        {'name': 'part', 'procedural': 'l-bracket', 'pose': {'xyz': [0, 0, 12], 'axis_angle': [0, 0, 0.5]},
         'material': 'chrome'},
        {'procedural': 'box', 'size': [200, 200, 4], 'pose': {'xyz': [0, 0, -2], 'axis_angle': [0, 0, 0]},
         'bsdf': {'base_color': 0.3}},
    ],
}


class RunConfigTests(SimpleTestCase):
    def test_defaults_come_from_settings(self):
        config = RunConfig.from_dict({})
        self.assertEqual(config.kind, 'l-bracket')
        self.assertEqual(config.policies, ['nbv', 'random', 'max-distance'])
        self.assertEqual(config.refine_options().outlier_gate, 10.0)
        self.assertEqual(config.camera_model().width, 128)
        self.assertEqual(config.camera_model().cx, 63.5)

    @override_settings(ACTIVE_POSE={'kind': 'cube', 'max_views': 7})
    def test_settings_override(self):
        config = RunConfig.from_dict({})
        self.assertEqual(config.kind, 'cube')
        self.assertEqual(config.stop_criteria().max_views, 7)
        self.assertIsNone(config.refine_options().outlier_gate)

    def test_nested_sections_merge(self):
        config = RunConfig.from_dict({'thresholds': {'tau_I': 0.5}})
        settings = config.prediction_settings()
        self.assertEqual(settings.tau_I, 0.5)
        self.assertEqual(settings.tau_sigma, 2.0)
        self.assertEqual(settings.patch, 7)

    def test_unknown_keys_are_rejected(self):
        with self.assertRaises(ConfigurationError):
            RunConfig.from_dict({'seedz': 3})
        with self.assertRaises(ConfigurationError):
            RunConfig.from_dict({'thresholds': {'tau_x': 1.0}})

    def test_invalid_values_are_rejected(self):
        for bad in ({'max_views': 0}, {'policies': ['greedy']}, {'material': 'velvet'},
                    {'thresholds': {'tau_I': 1.5}}, {'outlier_fraction': 2}):
            with self.subTest(bad=bad), self.assertRaises(ConfigurationError):
                RunConfig.from_dict(bad)

    def test_file_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.yaml'
            write_yaml(path, {'seed': 4, 'kinds': ['cube', 'sphere'], 'max_views': 3})
            config = RunConfig.from_file(path, {'seed': 9, 'max_views': None})
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.max_views, 3)
        self.assertEqual(config.all_kinds, ['cube', 'sphere'])

    def test_round_trip_through_yaml(self):
        config = RunConfig.from_dict({'seed': 2, 'policies': ['nbv']})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.yaml'
            write_yaml(path, config.to_dict())
            again = RunConfig.from_file(path)
        self.assertEqual(again, config)

    def test_broken_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'broken.yaml'
            path.write_text('seed: [1, 2\n')
            with self.assertRaises(ConfigurationError):
                read_yaml(path)
            with self.assertRaises(ConfigurationError):
                read_yaml(Path(tmp) / 'missing.yaml')
            path.write_text('- 1\n- 2\n')
            with self.assertRaises(ConfigurationError):
                RunConfig.from_file(path)

    def test_response_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'response.json'
            write_json(path, {'log_exposure': [0.0] * 3})
            with self.assertRaises(Exception):
                RunConfig.from_dict({'response': str(path)}).response_curve()
            write_json(path, {'smoothing_lambda': 1.0})
            with self.assertRaises(DataError):
                RunConfig.from_dict({'response': str(path)}).response_curve()


class SceneFileTests(SimpleTestCase):
    def test_scene_from_dict(self):
        scene = scene_from_dict(SCENE)
        self.assertEqual(len(scene.objects), 2)
        self.assertEqual(scene.objects[0].name, 'part')
        self.assertEqual(scene.objects[0].bsdf.metallic, 0.95)
        self.assertEqual(scene.objects[1].bsdf.base_color, 0.3)
        self.assertEqual(scene.objects[1].bsdf.roughness, 0.5)
        self.assertEqual(scene.light.frame, 'camera')
        np.testing.assert_allclose(scene.objects[0].pose.translation, [0.0, 0.0, 12.0])

    def test_schema_errors(self):
        missing_light = {k: v for k, v in SCENE.items() if k != 'light'}
        with self.assertRaises(ConfigurationError):
            scene_from_dict(missing_light)
        both = dict(SCENE, camera_pose={'eye': [0, 0, 1], 'target': [0, 0, 0], 'xyz': [0, 0, 0],
                                        'axis_angle': [0, 0, 0]})
        with self.assertRaises(ConfigurationError):
            scene_from_dict(both)
        with self.assertRaises(ConfigurationError):
            scene_from_dict(dict(SCENE, target=5))

    def test_mesh_paths_are_relative_to_the_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            save_mesh(box((10.0, 20.0, 30.0)), Path(tmp) / 'part.stl')
            document = dict(SCENE, objects=[{'mesh': 'part.stl', 'pose': {'xyz': [0, 0, 0], 'axis_angle': [0, 0, 0]}}])
            write_yaml(Path(tmp) / 'scene.yaml', document)
            scene = load_scene(Path(tmp) / 'scene.yaml')
        lo, hi = scene.target_object.mesh.bounds()
        np.testing.assert_allclose(hi - lo, [10.0, 20.0, 30.0], atol=1e-6)
        self.assertEqual(scene.target_object.name, 'part')

    def test_benchmark_document_rebuilds_the_scene(self):
        document, scene, T_wo = generate_benchmark_scene('glossy-part', 'glossy', seed=6)
        with tempfile.TemporaryDirectory() as tmp:
            write_yaml(Path(tmp) / 'scene.yaml', document)
            loaded = load_scene(Path(tmp) / 'scene.yaml')
        self.assertEqual(len(loaded.objects), len(scene.objects))
        np.testing.assert_allclose(loaded.target_object.pose.as_matrix(), T_wo.as_matrix(), atol=1e-9)
        np.testing.assert_allclose(loaded.camera_pose.as_matrix(), scene.camera_pose.as_matrix(), atol=1e-9)

    def test_pose_entry_is_plain_yaml(self):
        entry = pose_entry(Pose.from_xyz_axis_angle([1.0, 2.0, 3.0], [0.0, 0.4, 0.0]))
        self.assertEqual(yaml.safe_load(yaml.safe_dump(entry)), entry)
        self.assertAlmostEqual(entry['axis_angle'][1], 0.4, places=9)
