import json
import math
import os

import pytest
import torch
from torch.testing import assert_close

from conftest import tiny_spec
from thermasplat.src.dataset import (
    EXAMPLE_SCENE,
    SyntheticSceneSpec,
    darken,
    generate_scene,
    init_gaussians,
    load_poses,
    load_scene,
    open_scene,
    rescale_frames,
    save_scene,
    split_views,
    trace,
    view_paths,
    write_png,
)
from thermasplat.src.scene_core import DTYPE, Camera
from thermasplat.src.splat_renderer import render
from thermasplat.thermasplat import ValidationError


class TestDarken:
    def test_identity(self):
        bright = torch.rand(6, 6, 3, generator=torch.Generator().manual_seed(0), dtype=DTYPE)
        assert torch.equal(darken(bright, 1.0, 1.0, 0.0, seed=1), bright)

    def test_gain_and_gamma(self):
        low = darken(torch.full((3, 3, 3), 0.5, dtype=DTYPE), 0.2, 2.0, 0.0, seed=0)
        assert_close(low, torch.full((3, 3, 3), 0.01, dtype=DTYPE))

    def test_noise_level(self):
        bright = torch.full((120, 100, 3), 0.5, dtype=DTYPE)
        sigma = 0.02
        noiseless = darken(bright, 1.0, 1.0, 0.0, seed=0)
        noisy = darken(bright, 1.0, 1.0, sigma, seed=5)
        deviation = float((noisy - noiseless).abs().mean())
        assert deviation == pytest.approx(sigma * math.sqrt(2 / math.pi), rel=0.05)

    def test_deterministic_per_seed(self):
        bright = torch.full((10, 10, 3), 0.5, dtype=DTYPE)
        assert torch.equal(darken(bright, 0.5, 1.5, 0.05, seed=9), darken(bright, 0.5, 1.5, 0.05, seed=9))
        assert not torch.equal(darken(bright, 0.5, 1.5, 0.05, seed=9), darken(bright, 0.5, 1.5, 0.05, seed=10))

    @pytest.mark.parametrize("gain, gamma_dark, sigma", [(0.0, 1.0, 0.0), (1.5, 1.0, 0.0), (0.5, 0.9, 0.0), (0.5, 1.0, -0.1)])
    def test_invalid(self, gain, gamma_dark, sigma):
        with pytest.raises(ValidationError):
            darken(torch.zeros(2, 2, 3, dtype=DTYPE), gain, gamma_dark, sigma, seed=0)


class TestGenerateScene:
    def test_deterministic(self, tiny_scene):
        again = generate_scene(tiny_spec())
        for a, b in zip(tiny_scene.frames, again.frames):
            assert torch.equal(a.rgb_low, b.rgb_low)
            assert torch.equal(a.thermal, b.thermal)
        assert torch.equal(tiny_scene.points, again.points)

    def test_worker_count_does_not_change_output(self):
        serial = generate_scene(tiny_spec(), workers=1)
        pooled = generate_scene(tiny_spec(), workers=3)
        assert [frame.view_id for frame in pooled.frames] == [frame.view_id for frame in serial.frames]
        for a, b in zip(serial.frames, pooled.frames):
            assert torch.equal(a.rgb_low, b.rgb_low)
            assert torch.equal(a.thermal, b.thermal)
            assert torch.equal(a.rgb_gt_bright, b.rgb_gt_bright)
        assert torch.equal(serial.points, pooled.points)

    def test_negative_workers(self):
        with pytest.raises(ValidationError, match="Worker count"):
            generate_scene(tiny_spec(), workers=-1)

    def test_seed_changes_pixels_not_layout(self, tiny_scene):
        other = generate_scene(tiny_spec(seed=4))
        assert len(other.frames) == len(tiny_scene.frames)
        assert other.frames[0].rgb_low.shape == tiny_scene.frames[0].rgb_low.shape
        assert not torch.equal(other.frames[0].rgb_low, tiny_scene.frames[0].rgb_low)

    def test_frames_and_points(self, tiny_scene):
        assert [frame.view_id for frame in tiny_scene.frames] == [0, 1, 2, 3, 4]
        assert tiny_scene.points.shape == (80, 3)
        assert float(tiny_scene.point_colors.min()) >= 0.0
        for frame in tiny_scene.frames:
            assert frame.rgb_low.shape == (18, 24, 3)
            assert frame.thermal.shape == (18, 24)
            assert float(frame.rgb_low.mean()) < float(frame.rgb_gt_bright.mean())

    def test_hot_sphere_silhouette(self):
        sphere = {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5, "albedo": [1.0, 1.0, 1.0], "temperature": 1.0}
        camera = Camera.look_at((0.0, -3.0, 0.0), (0.0, 0.0, 0.0), 21, 21, fov_x_degrees=30.0)
        bright, thermal = trace([sphere], camera)
        inside = bright.sum(-1) > 0
        assert bool(inside[10, 10])
        assert not bool(inside[0, 0])
        assert torch.equal(thermal, inside.to(DTYPE))

    def test_emissive_area_is_view_independent(self):
        sphere = {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5, "albedo": [0.5, 0.5, 0.5], "temperature": 1.0}
        spec = SyntheticSceneSpec(seed=0, primitives=[sphere], num_views=4, width=40, height=40, orbit_height=0.0, target=(0.0, 0.0, 0.0), jitter=0.0, num_points=10)
        areas = [float(frame.thermal.sum()) for frame in generate_scene(spec).frames]
        assert max(areas) <= 1.05 * min(areas)

    def test_thermal_ignores_darkening(self):
        bright_spec = generate_scene(tiny_spec(gain=1.0, gamma_dark=1.0, noise_sigma=0.0))
        dark_spec = generate_scene(tiny_spec(gain=0.1, gamma_dark=2.0, noise_sigma=0.05))
        for a, b in zip(bright_spec.frames, dark_spec.frames):
            assert torch.equal(a.thermal, b.thermal)

    def test_empty_primitive_list(self):
        with pytest.raises(ValidationError):
            generate_scene(tiny_spec(primitives=[]))

    def test_too_few_views(self):
        with pytest.raises(ValidationError):
            generate_scene(tiny_spec(num_views=1))

    def test_bundled_spec_loads(self):
        spec = SyntheticSceneSpec.from_json(EXAMPLE_SCENE)
        assert spec.num_views == 16
        assert (spec.width, spec.height) == (160, 120)


class TestInitGaussians:
    def test_two_points(self):
        points = torch.tensor([[0.0, 0.0, 0.0], [0.3, 0.4, 0.0]], dtype=DTYPE)
        model = init_gaussians(points, torch.full((2, 3), 0.5, dtype=DTYPE), k_neighbors=1)
        assert_close(torch.exp(model.log_scale.detach()), torch.full((2, 3), 0.5, dtype=DTYPE))

    def test_grid_pitch(self):
        axis = torch.arange(4, dtype=DTYPE) * 0.2
        points = torch.cartesian_prod(axis, axis, axis)
        model = init_gaussians(points, torch.full((64, 3), 0.5, dtype=DTYPE), k_neighbors=1)
        assert_close(torch.exp(model.log_scale.detach()), torch.full((64, 3), 0.2, dtype=DTYPE))

    def test_initial_state(self):
        points = torch.rand(10, 3, generator=torch.Generator().manual_seed(0), dtype=DTYPE)
        colors = torch.tensor([[0.2, 0.5, 0.8]], dtype=DTYPE).expand(10, 3)
        model = init_gaussians(points, colors)
        assert_close(torch.sigmoid(model.opacity_logit.detach()), torch.full((10,), 0.1, dtype=DTYPE))
        assert_close(torch.sigmoid(model.color_raw.detach()), colors)
        assert torch.equal(model.rotation.detach(), torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=DTYPE).expand(10, 4))

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            init_gaussians(torch.zeros(3, 3, dtype=DTYPE), torch.zeros(3, 3, dtype=DTYPE), k_neighbors=3)

    def test_initial_render_is_not_black(self, tiny_scene):
        model = init_gaussians(tiny_scene.points, tiny_scene.point_colors)
        assert float(render(model, tiny_scene.frames[0].camera).color.max()) > 0


class TestSceneFiles:
    def test_round_trip(self, tiny_scene, tmp_path):
        save_scene(tiny_scene.frames, tmp_path, tiny_scene.meta, tiny_scene.points, tiny_scene.point_colors)
        loaded = load_scene(tmp_path)
        assert len(loaded.frames) == len(tiny_scene.frames)
        for original, frame in zip(tiny_scene.frames, loaded.frames):
            assert frame.view_id == original.view_id
            assert float((frame.rgb_low - original.rgb_low).abs().max()) <= 1 / 255
            assert float((frame.thermal - original.thermal).abs().max()) <= 1 / 255
            assert float((frame.rgb_gt_bright - original.rgb_gt_bright).abs().max()) <= 1 / 255
            assert torch.equal(frame.camera.world_to_camera(), original.camera.world_to_camera())
            assert (frame.camera.fx, frame.camera.cy) == (original.camera.fx, original.camera.cy)
        assert torch.equal(loaded.points, tiny_scene.points)
        assert loaded.meta["generator"]["seed"] == 3

    def test_missing_thermal_names_view(self, tiny_scene, tmp_path):
        save_scene(tiny_scene.frames, tmp_path)
        os.remove(view_paths(tmp_path, 2)[1])
        with pytest.raises(ValidationError, match="View 2"):
            load_scene(tmp_path)

    def test_size_mismatch_names_view(self, tiny_scene, tmp_path):
        save_scene(tiny_scene.frames, tmp_path)
        write_png(torch.zeros(5, 5, dtype=DTYPE), view_paths(tmp_path, 1)[1])
        with pytest.raises(ValidationError, match="View 1"):
            load_scene(tmp_path)

    def test_malformed_poses(self, tmp_path):
        (tmp_path / "poses.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_scene(tmp_path)

    def test_hand_built_fixture(self, tmp_path):
        os.makedirs(tmp_path / "views")
        views = []
        for view_id, shift in ((4, 0.0), (9, 0.5)):
            matrix = [1.0, 0.0, 0.0, shift, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]
            views.append({"id": view_id, "world_to_camera": matrix, "intrinsics": {"fx": 8.0, "fy": 8.0, "cx": 3.0, "cy": 2.0}, "width": 6, "height": 4})
            low_path, thermal_path, _ = view_paths(tmp_path, view_id)
            write_png(torch.full((4, 6, 3), 0.2, dtype=DTYPE), low_path)
            write_png(torch.full((4, 6), 0.6, dtype=DTYPE), thermal_path)
        (tmp_path / "poses.json").write_text(json.dumps({"views": views}), encoding="utf-8")

        loaded = load_scene(tmp_path)
        assert [frame.view_id for frame in loaded.frames] == [4, 9]
        assert loaded.frames[1].rgb_gt_bright is None
        assert loaded.points is None
        assert float(loaded.frames[1].camera.translation[0]) == 0.5
        assert [view_id for view_id, _ in load_poses(tmp_path / "poses.json")] == [4, 9]


class TestSceneHelpers:
    def test_every_eighth_view_is_held_out(self, tiny_scene):
        frames = tiny_scene.frames * 4
        train, held_out = split_views(frames, every=8)
        assert len(held_out) == 3
        assert len(train) == 17

    def test_rescale_keeps_rays(self, tiny_scene):
        frame = tiny_scene.frames[0]
        (small,) = rescale_frames([frame], 12, 9)
        assert small.rgb_low.shape == (9, 12, 3)
        assert small.thermal.shape == (9, 12)
        assert small.camera.fx == pytest.approx(frame.camera.fx / 2)
        assert float(small.rgb_low.mean()) == pytest.approx(float(frame.rgb_low.mean()), abs=1e-12)

    def test_open_generated_scene_uses_seed(self, spec_file):
        frames, points, _, name = open_scene(spec_file, seed=11, size=(16, 12))
        assert name == "tiny_spec-11"
        assert frames[0].rgb_low.shape == (12, 16, 3)
        assert points.shape[1] == 3

    def test_open_scene_directory(self, tiny_scene, tmp_path):
        directory = tmp_path / "desk"
        save_scene(tiny_scene.frames, directory)
        frames, points, _, name = open_scene(str(directory))
        assert name == "desk"
        assert len(frames) == 5
        assert points is None
