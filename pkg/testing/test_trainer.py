import dataclasses
import os

import pytest
import torch

from conftest import fast_config
from thermasplat.src.ablate import VARIANTS
from thermasplat.src.metrics import psnr
from thermasplat.src.scene_core import logit
from thermasplat.src.trainer import LOG_COLUMNS, Trainer, convex_margin, read_log, validate_log, write_summary
from thermasplat.thermasplat import ValidationError


def make_trainer(scene, **overrides):
    return Trainer(fast_config(**overrides), scene.frames, scene.points, scene.point_colors, "tiny")


class TestTraining:
    def test_rows_and_log_file(self, tiny_scene, tmp_path):
        trainer = make_trainer(tiny_scene)
        rows = trainer.train(out_dir=str(tmp_path), progress=False)
        assert [row["t"] for row in rows] == list(range(1, 21))
        assert set(rows[0]) == set(LOG_COLUMNS)
        assert os.path.isfile(tmp_path / "checkpoints" / "final.dtgs")
        logged = read_log(str(tmp_path / "log.csv"))
        assert [row["t"] for row in logged] == list(range(1, 21))
        assert logged[-1]["loss_total"] == rows[-1]["loss_total"]

    def test_round_robin_over_training_views(self, tiny_scene):
        trainer = make_trainer(tiny_scene)
        rows = trainer.train(until=8, progress=False)
        assert [row["view"] for row in rows] == [1, 2, 3, 4, 1, 2, 3, 4]

    def test_invariants_hold_on_real_rows(self, tiny_scene):
        rows = make_trainer(tiny_scene, transition=10).train(progress=False)
        assert validate_log(rows)
        assert rows[-1]["alpha"] == 1.0

    def test_periodic_checkpoints(self, tiny_scene, tmp_path):
        trainer = make_trainer(tiny_scene, iters=4, checkpoint_every=2)
        trainer.train(out_dir=str(tmp_path), progress=False)
        names = sorted(os.listdir(tmp_path / "checkpoints"))
        assert names == ["ckpt_000002.dtgs", "ckpt_000004.dtgs", "final.dtgs"]

    def test_pruning_during_training(self, tiny_scene):
        trainer = make_trainer(tiny_scene, iters=4, prune_every=2)
        with torch.no_grad():
            trainer.gaussians.opacity_logit[:30] = logit(0.001)
        trainer.train(progress=False)
        assert len(trainer.gaussians) == len(tiny_scene.points) - 30
        assert trainer.optimizer.group("position")["params"][0] is trainer.gaussians.position

    def test_summary(self, tiny_scene, tmp_path):
        trainer = make_trainer(tiny_scene, iters=2)
        initial = trainer.evaluate()
        trainer.train(progress=False)
        summary = write_summary(str(tmp_path / "summary.json"), trainer, initial, trainer.evaluate())
        assert summary["iterations"] == 2
        assert summary["luminance_spread_enhanced"] >= 0.0
        assert os.path.isfile(tmp_path / "summary.json")


class TestResumeDeterminism:
    @pytest.mark.parametrize("sampling", ["round_robin", "random"])
    def test_split_run_matches_straight_run(self, tiny_scene, tmp_path, sampling):
        straight = make_trainer(tiny_scene, view_sampling=sampling).train(progress=False)

        first = make_trainer(tiny_scene, view_sampling=sampling)
        first.train(until=10, progress=False)
        path = first.save(str(tmp_path / "half.dtgs"))

        second = make_trainer(tiny_scene, view_sampling=sampling).resume(path)
        resumed = second.train(progress=False)

        assert [row["view"] for row in first.rows + resumed] == [row["view"] for row in straight]
        assert [row["loss_total"] for row in first.rows + resumed] == [row["loss_total"] for row in straight]


class TestAblationFlags:
    def test_disable_cyclic_keeps_low_light_target(self, tiny_scene):
        trainer = make_trainer(tiny_scene, disable_cyclic=True)
        rows = trainer.train(until=5, progress=False)
        assert all(row["alpha"] == 0.0 for row in rows)
        for state, frame in zip(trainer.supervision, trainer.train_frames):
            assert torch.equal(state.gt_current, frame.rgb_low)

    def test_disable_thermal_zeroes_its_weight(self, tiny_scene):
        rows = make_trainer(tiny_scene, disable_thermal=True).train(until=3, progress=False)
        assert all(row["lambda_therm"] == 0.0 and row["loss_therm"] == 0.0 for row in rows)
        validate_log(rows)

    def test_disable_enhancer_zeroes_its_weight(self, tiny_scene):
        trainer = make_trainer(tiny_scene, disable_enhancer=True)
        rows = trainer.train(until=3, progress=False)
        assert all(row["lambda_enh"] == 0.0 for row in rows)
        with pytest.raises(KeyError):
            trainer.optimizer.group("grid")

    def test_preprocess_retinex_uses_fixed_targets(self, tiny_scene):
        trainer = make_trainer(tiny_scene, preprocess_retinex=True)
        rows = trainer.train(until=3, progress=False)
        assert all(row["alpha"] == 1.0 for row in rows)
        assert all(row["lambda_therm"] == 0.0 for row in rows)
        for state, target in zip(trainer.supervision, trainer.fixed_targets):
            assert torch.equal(state.gt_current, target)

    def test_thermal_gaussian_trains_on_low_light_with_thermal_loss(self, tiny_scene):
        trainer = make_trainer(tiny_scene, **VARIANTS["thermal_gaussian"])
        rows = trainer.train(until=4, progress=False)
        assert all(row["alpha"] == 0.0 and row["lambda_enh"] == 0.0 for row in rows)
        assert all(row["lambda_therm"] > 0.0 for row in rows)
        assert all(row["loss_therm"] >= 0.0 for row in rows)
        for state, frame in zip(trainer.supervision, trainer.train_frames):
            assert torch.equal(state.gt_current, frame.rgb_low)
        validate_log(rows)


class TestValidateLog:
    def rows(self, tiny_scene):
        return make_trainer(tiny_scene, transition=10).train(until=4, progress=False)

    def test_decreasing_alpha(self, tiny_scene):
        rows = self.rows(tiny_scene)
        rows[2] = dict(rows[2], alpha=0.0)
        with pytest.raises(ValidationError, match="monotonicity"):
            validate_log(rows)

    def test_negative_margin(self, tiny_scene):
        rows = self.rows(tiny_scene)
        rows[1] = dict(rows[1], gt_min_margin=-0.01)
        with pytest.raises(ValidationError, match="convex"):
            validate_log(rows)

    def test_unnormalized_weights(self, tiny_scene):
        rows = self.rows(tiny_scene)
        rows[0] = dict(rows[0], lambda_gs=rows[0]["lambda_gs"] + 0.1)
        with pytest.raises(ValidationError, match="normalized"):
            validate_log(rows)

    def test_missing_log(self, tmp_path):
        with pytest.raises(ValidationError):
            read_log(str(tmp_path / "log.csv"))


def test_convex_margin():
    previous = torch.zeros(2, 2, dtype=torch.float64)
    enhanced = torch.ones(2, 2, dtype=torch.float64)
    assert convex_margin(previous, enhanced, torch.full((2, 2), 0.25, dtype=torch.float64)) == 0.25
    assert convex_margin(previous, enhanced, torch.full((2, 2), 1.5, dtype=torch.float64)) == -0.5


class TestEvaluate:
    def test_heldout_report(self, tiny_scene):
        report = make_trainer(tiny_scene).evaluate()
        assert report.view_ids == [0]
        assert 0.0 < report.mean_psnr < 99.0

    def test_train_split(self, tiny_scene):
        assert make_trainer(tiny_scene).evaluate("train").view_ids == [1, 2, 3, 4]

    def test_empty_split(self, tiny_scene):
        trainer = make_trainer(tiny_scene, holdout_every=100)
        trainer.heldout_frames = []
        with pytest.raises(ValidationError):
            trainer.evaluate()

    def test_heldout_without_bright_reference_scores_current_target(self, tiny_scene, capsys):
        frames = [dataclasses.replace(frame, rgb_gt_bright=None) if frame.view_id == 0 else frame for frame in tiny_scene.frames]
        trainer = Trainer(fast_config(), frames, tiny_scene.points, tiny_scene.point_colors, "tiny")
        report = trainer.evaluate()
        assert report.view_ids == [0]
        assert report.psnr_db[0] == psnr(trainer.render(frames[0]).color, frames[0].rgb_low)
        assert "no bright reference" in capsys.readouterr().out
