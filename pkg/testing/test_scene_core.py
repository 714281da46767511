import math

import pytest
import torch
from torch.testing import assert_close

from thermasplat.src.scene_core import (
    DTYPE,
    Camera,
    GaussianModel,
    MultiViewFrame,
    ParamBundle,
    activate,
    covariance_of,
    logit,
)
from thermasplat.src.splat_renderer import camera_space
from thermasplat.thermasplat import DegenerateRotationError, NumericalFailure, ValidationError

IDENTITY = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE)


class TestCovariance:
    def test_unit_scales_without_rotation(self):
        assert_close(covariance_of(IDENTITY, torch.zeros(3, dtype=DTYPE)), torch.eye(3, dtype=DTYPE))

    def test_scaled_axis(self):
        log_scale = torch.tensor([math.log(2.0), 0.0, 0.0], dtype=DTYPE)
        assert_close(covariance_of(IDENTITY, log_scale), torch.diag(torch.tensor([4.0, 1.0, 1.0], dtype=DTYPE)))

    def test_quarter_turn_about_z_swaps_axes(self):
        half = math.sqrt(0.5)
        rotation = torch.tensor([half, 0.0, 0.0, half], dtype=DTYPE)
        log_scale = torch.tensor([math.log(2.0), 0.0, 0.0], dtype=DTYPE)
        assert_close(covariance_of(rotation, log_scale), torch.diag(torch.tensor([1.0, 4.0, 1.0], dtype=DTYPE)))

    def test_zero_quaternion(self):
        with pytest.raises(DegenerateRotationError):
            covariance_of(torch.zeros(4, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def test_sign_and_norm_of_quaternion_do_not_matter(self):
        generator = torch.Generator().manual_seed(1)
        rotation = torch.randn(4, generator=generator, dtype=DTYPE)
        log_scale = torch.randn(3, generator=generator, dtype=DTYPE)
        reference = covariance_of(rotation, log_scale)
        assert_close(covariance_of(-rotation, log_scale), reference)
        assert_close(covariance_of(3.5 * rotation, log_scale), reference)

    def test_symmetric_positive_definite(self):
        model = GaussianModel.random(8, torch.Generator().manual_seed(2))
        covariance = model.covariances().detach()
        assert_close(covariance, covariance.transpose(-1, -2))
        assert (torch.linalg.eigvalsh(covariance) > 0).all()


class TestActivate:
    def test_opacity_values(self):
        opacity, _ = activate(torch.tensor([0.0, 2.0, 50.0], dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
        assert_close(opacity[:2], torch.tensor([0.5, 0.8807970779778823], dtype=DTYPE))
        assert float(opacity[2]) == pytest.approx(1.0)

    def test_color_stays_in_unit_cube(self):
        _, color = activate(torch.zeros(1, dtype=DTYPE), torch.tensor([-40.0, 0.0, 40.0], dtype=DTYPE))
        assert float(color.min()) >= 0.0
        assert float(color.max()) <= 1.0

    def test_logit_inverts_sigmoid(self):
        assert float(torch.sigmoid(logit(0.1))) == pytest.approx(0.1, abs=1e-15)


class TestCamera:
    def test_rejects_non_positive_focal(self):
        with pytest.raises(ValidationError):
            Camera(0.0, 10.0, 5.0, 5.0, 10, 10)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValidationError):
            Camera(10.0, 10.0, 5.0, 5.0, 10, 10, rotation=2 * torch.eye(3, dtype=DTYPE))

    def test_look_at_puts_target_on_axis(self):
        camera = Camera.look_at((3.0, 1.0, 1.2), (0.0, 0.0, 0.3), 32, 24)
        point = camera_space(torch.tensor([[0.0, 0.0, 0.3]], dtype=DTYPE), camera)[0]
        assert abs(float(point[0])) < 1e-12
        assert abs(float(point[1])) < 1e-12
        assert float(point[2]) > 0

    def test_matrix_round_trip(self):
        camera = Camera.look_at((2.0, -1.0, 1.0), (0.0, 0.0, 0.0), 20, 10)
        rebuilt = Camera.from_matrix(camera.world_to_camera().reshape(-1), (camera.fx, camera.fy, camera.cx, camera.cy), 20, 10)
        assert torch.equal(rebuilt.world_to_camera(), camera.world_to_camera())
        assert_close(rebuilt.center(), torch.tensor([2.0, -1.0, 1.0], dtype=DTYPE))


class TestMultiViewFrame:
    def test_size_mismatch_names_view(self):
        camera = Camera(10.0, 10.0, 4.0, 3.0, 8, 6)
        with pytest.raises(ValidationError, match="View 7"):
            MultiViewFrame(7, torch.zeros(6, 8, 3, dtype=DTYPE), torch.zeros(5, 8, dtype=DTYPE), camera)

    def test_non_finite_image(self):
        camera = Camera(10.0, 10.0, 4.0, 3.0, 8, 6)
        low = torch.zeros(6, 8, 3, dtype=DTYPE)
        low[2, 2, 1] = math.nan
        with pytest.raises(ValidationError):
            MultiViewFrame(0, low, torch.zeros(6, 8, dtype=DTYPE), camera)


class TestParamBundle:
    def test_gather_scatter_identity(self):
        model = GaussianModel.random(4, torch.Generator().manual_seed(0))
        bundle = ParamBundle(model.named_tensors())
        flat = bundle.gather()
        assert bundle.size == 4 * 14
        bundle.scatter(flat * 2)
        assert_close(bundle.gather(), flat * 2)

    def test_locate(self):
        model = GaussianModel.random(2, torch.Generator().manual_seed(0))
        bundle = ParamBundle(model.named_tensors())
        assert bundle.locate(0) == ("position", 0)
        assert bundle.locate(6) == ("log_scale", 0)
        assert bundle.locate(12) == ("rotation", 0)
        assert bundle.locate(20) == ("opacity", 0)
        assert bundle.locate(27) == ("color", 5)

    def test_scatter_size_mismatch(self):
        bundle = ParamBundle(GaussianModel.random(2, torch.Generator().manual_seed(0)).named_tensors())
        with pytest.raises(ValidationError):
            bundle.scatter(torch.zeros(3, dtype=DTYPE))

    def test_non_finite_names_coordinate(self):
        model = GaussianModel.random(3, torch.Generator().manual_seed(0))
        with torch.no_grad():
            model.opacity_logit[1] = math.inf
        with pytest.raises(NumericalFailure, match=r"opacity\[1\]"):
            ParamBundle(model.named_tensors()).check_finite("parameter")


class TestGaussianModel:
    def test_select_keeps_rows(self):
        model = GaussianModel.random(5, torch.Generator().manual_seed(4))
        keep = torch.tensor([0, 3])
        subset = model.select(keep)
        assert len(subset) == 2
        assert torch.equal(subset.position.detach(), model.position.detach()[keep])
        assert subset.position.requires_grad

    def test_check_finite_names_index(self):
        model = GaussianModel.random(5, torch.Generator().manual_seed(4))
        with torch.no_grad():
            model.position[3, 1] = math.nan
        with pytest.raises(NumericalFailure, match="index 3"):
            model.check_finite()
