# core/tests/test_render.py

import math

import numpy as np
from django.test import SimpleTestCase

from core.calib import ResponseCurve
from core.exceptions import ContractViolationError
from core.geometry import CameraModel, Pose, look_at
from core.meshes import box, v_groove
from core.render import (MATERIAL_PRESETS, BsdfParams, PointLight, PredictionSettings, RadianceImage,
                         SceneDescription, SceneObject, eval_bsdf, object_visibility, predict_depth_map,
                         predict_missing_mask, render_image, render_pair, render_radiance, synthesize_pattern_pair)

MATTE = BsdfParams(0.7, 0.0, 0.8, 0.0)


def downward_scene(objects, light, eye=(0.0, 0.0, 300.0)):
    cam = CameraModel(60.0, 60.0, 16.0, 12.0, 33, 25, 20.0)
    return SceneDescription(objects, light, cam, look_at(eye, (0.0, 0.0, 0.0)))


def floor(bsdf=MATTE):
    # top face at z = 0
    return SceneObject(box((400.0, 400.0, 10.0)), Pose(np.eye(3), [0.0, 0.0, -5.0]), bsdf, 'floor')


class BsdfTests(SimpleTestCase):
    def test_lambertian_limit(self):
        rng = np.random.default_rng(0)
        n = np.array([0.0, 0.0, 1.0])
        for _ in range(20):
            wi = rng.normal(size=3)
            wo = rng.normal(size=3)
            wi[2], wo[2] = abs(wi[2]) + 0.1, abs(wo[2]) + 0.1
            wi /= np.linalg.norm(wi)
            wo /= np.linalg.norm(wo)
            self.assertAlmostEqual(eval_bsdf(MATTE, n, wi, wo), 0.7 / math.pi, delta=0.007 / math.pi)

    def test_below_horizon_is_black(self):
        n = np.array([0.0, 0.0, 1.0])
        self.assertEqual(eval_bsdf(MATERIAL_PRESETS['glossy'], n, [0.0, 0.6, -0.8], [0.0, 0.0, 1.0]), 0.0)

    def test_specular_peak_in_mirror_direction(self):
        n = np.array([0.0, 0.0, 1.0])
        wi = np.array([0.6, 0.0, 0.8])
        chrome = MATERIAL_PRESETS['chrome']
        self.assertGreater(eval_bsdf(chrome, n, wi, [-0.6, 0.0, 0.8]),
                           100 * eval_bsdf(chrome, n, wi, [0.6, 0.0, 0.8]))

    def test_coefficients_are_range_checked(self):
        with self.assertRaises(ContractViolationError):
            BsdfParams(1.2, 0.0, 0.5, 0.5)

    def test_directional_albedo_never_exceeds_one(self):
        theta, phi = np.meshgrid((np.arange(600) + 0.5) * (0.5 * math.pi / 600),
                                 (np.arange(1200) + 0.5) * (2.0 * math.pi / 1200), indexing='ij')
        w_out = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
        w_out = w_out.reshape(-1, 3)
        solid_angle = (np.sin(theta) * (0.5 * math.pi / 600) * (2.0 * math.pi / 1200)).ravel()
        n = np.array([0.0, 0.0, 1.0])
        materials = [MATERIAL_PRESETS['matte'], MATERIAL_PRESETS['glossy'], BsdfParams(1.0, 0.0, 0.5, 1.0),
                     BsdfParams(1.0, 1.0, 0.3, 0.5)]
        for params in materials:
            for incidence in (0.0, 30.0, 60.0, 80.0):
                a = math.radians(incidence)
                w_in = np.array([math.sin(a), 0.0, math.cos(a)])
                f = eval_bsdf(params, np.broadcast_to(n, w_out.shape), np.broadcast_to(w_in, w_out.shape), w_out)
                albedo = float(np.sum(f * w_out[:, 2] * solid_angle))
                with self.subTest(params=params, incidence=incidence):
                    self.assertGreater(albedo, 0.0)
                    self.assertLessEqual(albedo, 1.0)


class RadianceTests(SimpleTestCase):
    def test_inverse_square_falloff(self):
        near = downward_scene([floor()], PointLight([0.0, 0.0, 200.0], 1e5, 'world'))
        far = downward_scene([floor()], PointLight([0.0, 0.0, 400.0], 1e5, 'world'))
        a = render_radiance(near, 'single').values[12, 16]
        b = render_radiance(far, 'single').values[12, 16]
        self.assertAlmostEqual(a / b, 4.0, places=6)

    def test_direct_radiance_matches_lambert(self):
        scene = downward_scene([floor()], PointLight([0.0, 0.0, 200.0], 1e5, 'world'))
        rad = render_radiance(scene, 'single')
        expected = 0.7 / math.pi * 1e5 / 200.0 ** 2
        self.assertAlmostEqual(rad.values[12, 16] / expected, 1.0, delta=0.01)
        self.assertAlmostEqual(rad.depth[12, 16], 300.0, places=6)

    def test_convex_object_has_no_interreflections(self):
        chrome_box = SceneObject(box((40.0, 40.0, 40.0)), Pose.identity(), MATERIAL_PRESETS['chrome'], 'box')
        scene = downward_scene([chrome_box], PointLight([20.0, -10.0, 0.0], 7e5), eye=(60.0, -40.0, 250.0))
        single, multi = render_pair(scene)
        np.testing.assert_allclose(multi.values, single.values)

    def test_misses_are_dark(self):
        scene = downward_scene([SceneObject(box((20.0, 20.0, 20.0)), Pose.identity(), MATTE)],
                               PointLight([0.0, 0.0, 0.0], 7e5))
        rad = render_radiance(scene)
        self.assertTrue(np.all(rad.values[~rad.hit] == 0.0))
        self.assertTrue(np.all(np.isinf(rad.depth[~rad.hit])))

    def test_shadowed_floor_keeps_only_ambient(self):
        blocker = SceneObject(box((60.0, 60.0, 10.0)), Pose(np.eye(3), [0.0, 0.0, 100.0]), MATTE, 'blocker')
        scene = downward_scene([floor(), blocker], PointLight([0.0, 0.0, 200.0], 1e5, 'world'), eye=(150.0, 0.0, 300.0))
        rad = render_radiance(scene, 'single')
        # the floor point straight below the blocker is in shadow
        ids = rad.object_ids
        self.assertTrue(np.any(ids == 0))
        self.assertEqual(rad.values[ids == 0].min(), 0.0)

    def test_render_image_saturates(self):
        rad = RadianceImage(np.array([[0.0, 0.5, 1e9]]), np.ones((1, 3)), np.ones((1, 3), dtype=bool))
        img = render_image(rad, ResponseCurve.linear(), 1.0)
        self.assertEqual(img.values[0, 0], 0.0)
        self.assertEqual(img.values[0, 2], 1.0)
        with self.assertRaises(ContractViolationError):
            render_image(rad, ResponseCurve.linear(), 0.0)


class InterreflectionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.cam = CameraModel(80.0, 80.0, 24.0, 18.0, 49, 37, 20.0)
        cls.light = PointLight([0.0, 0.0, 0.0], 7e5, 'camera')

    def _scene(self, mesh):
        obj = SceneObject(mesh, Pose.identity(), MATERIAL_PRESETS['chrome'], 'target')
        return SceneDescription([obj], self.light, self.cam, look_at((0.0, 0.0, 200.0), (0.0, 0.0, 0.0)))

    def test_chrome_groove_is_flagged(self):
        single, multi = render_pair(self._scene(v_groove()))
        missing = predict_missing_mask(single, multi, 0.7)
        target = single.object_ids == 0
        self.assertGreaterEqual((missing & target).sum(), 0.1 * target.sum())

    def test_groove_gains_radiance_from_interreflections(self):
        single, multi = render_pair(self._scene(v_groove()))
        target = single.object_ids == 0
        self.assertTrue(np.all(multi.values[target] >= single.values[target]))
        self.assertGreater(multi.values[target].sum(), single.values[target].sum())
        self.assertGreater(int((multi.values[target] > 1.01 * single.values[target] + 1e-9).sum()), 0)

    def test_convex_chrome_box_is_not_flagged(self):
        single, multi = render_pair(self._scene(box((40.0, 40.0, 40.0))))
        missing = predict_missing_mask(single, multi, 0.7)
        self.assertEqual(int((missing & (single.object_ids == 0)).sum()), 0)

    def test_threshold_range(self):
        single, multi = render_pair(self._scene(box((40.0, 40.0, 40.0))))
        with self.assertRaises(ContractViolationError):
            predict_missing_mask(single, multi, 0.0)


class PredictionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cam = CameraModel(80.0, 80.0, 24.0, 18.0, 49, 37, 30.0)
        target = SceneObject(box((40.0, 40.0, 40.0)), Pose.identity(), MATERIAL_PRESETS['matte'], 'target')
        cls.scene = SceneDescription([target], PointLight([40.0, -30.0, 0.0], 7e5), cam,
                                     look_at((60.0, -100.0, 330.0), (0.0, 0.0, 0.0)))
        cls.response = ResponseCurve.linear()

    def test_constant_sigma_marks_every_target_pixel(self):
        depth = predict_depth_map(self.scene, Pose.identity(), self.scene.camera_pose,
                                  PredictionSettings(constant_sigma=1.0), self.response)
        self.assertGreater(depth.valid_count(), 0)
        np.testing.assert_allclose(depth.variance[depth.valid], 1.0)

    def test_object_out_of_view_is_low_visibility(self):
        away = Pose(np.eye(3), [5000.0, 0.0, 0.0])
        depth = predict_depth_map(self.scene, away, self.scene.camera_pose, PredictionSettings(), self.response)
        self.assertTrue(depth.low_visibility)
        self.assertEqual(depth.valid_count(), 0)

    def test_predicted_map_has_finite_variances(self):
        depth = predict_depth_map(self.scene, Pose.identity(), self.scene.camera_pose,
                                  PredictionSettings(tau_sigma=50.0), self.response)
        self.assertGreater(depth.valid_count(), 0)
        self.assertTrue(np.all(np.isfinite(depth.variance[depth.valid])))
        self.assertIn('target_pixels', depth.info)

    def test_pattern_pair_disparity(self):
        pair = synthesize_pattern_pair(self.scene, self.response, 7e5, 1.4e5, pattern_seed=3)
        hit = np.isfinite(pair.disparity)
        self.assertTrue(hit.any())
        depth = render_radiance(self.scene, 'single').depth
        np.testing.assert_allclose(pair.disparity[hit], self.scene.camera.focal_baseline / depth[hit])
        self.assertEqual(pair.left.values.shape, (37, 49))

    def test_visibility_drops_behind_an_occluder(self):
        self.assertEqual(object_visibility(self.scene), 1.0)
        occluder = SceneObject(box((30.0, 30.0, 5.0)), Pose(np.eye(3), [10.0, -30.0, 120.0]), MATTE, 'occluder')
        occluded = SceneDescription(list(self.scene.objects) + [occluder], self.scene.light, self.scene.camera,
                                    self.scene.camera_pose)
        self.assertLess(object_visibility(occluded), 1.0)
