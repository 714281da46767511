"""
The joint training loop: enhance, blend the supervision target, render, score, schedule, step.

One view per iteration. The enhancer output feeds both the evolving target and the thermal
loss, so reconstruction gradients reach the illumination grids through the target blend.
"""

import csv
import json
import os

import torch
from tqdm import tqdm

from ..thermasplat import Logger, NumericalFailure, ValidationError
from .checkpoint import capture, load_checkpoint, save_checkpoint
from .cyclic_scheduler import SupervisionState, alpha_blend, blend, gs_loss, lambda_schedule, normalize_weights, total_loss
from .dataset import fallback_points, init_gaussians, split_views
from .metrics import MetricReport, luminance_spread
from .optimizer import SplatAdam, cosine_lr, prune
from .retinex_enhancer import RetinexEnhancer
from .splat_renderer import SplatRenderer
from .thermal_supervision import thermal_loss

LOG_COLUMNS = [
    "t", "view", "alpha", "lambda_enh", "lambda_gs", "lambda_therm",
    "loss_enh", "loss_gs", "loss_therm", "loss_total", "lr", "gt_min_margin",
]


def convex_margin(previous, enhanced, gt):
    """Smallest slack of gt inside [min(previous, enhanced), max(previous, enhanced)]; negative means violated."""
    low = torch.minimum(previous, enhanced)
    high = torch.maximum(previous, enhanced)
    return float(torch.minimum(gt - low, high - gt).min())


class Trainer:
    logger = Logger()

    def __init__(self, config, frames, points=None, point_colors=None, scene_name="scene"):
        self.config = config
        self.scene_name = scene_name
        self.train_frames, self.heldout_frames = split_views(frames, config.holdout_every)
        if not self.train_frames:
            raise ValidationError("No training views left after the held-out split")

        self.generator = torch.Generator().manual_seed(config.seed)
        if points is None:
            points, point_colors = fallback_points(frames, config.init_points, self.generator)
        self.gaussians = init_gaussians(points, point_colors, config.k_neighbors)

        self.enhancers = RetinexEnhancer.for_frames(
            self.train_frames, (config.grid_rows, config.grid_cols), config.enhancer_gamma, config.exposure, config.enh_weights
        )
        self.schedule = config.schedule_config()
        self.renderer = SplatRenderer(config.background)
        self.iteration = 0
        self.rows = []

        self.fixed_targets = None
        if config.preprocess_retinex:
            self.fixed_targets = self.fit_enhancers(config.preprocess_iters)
            self.supervision = [SupervisionState(target.clone(), 0, config.transition) for target in self.fixed_targets]
        else:
            self.supervision = [SupervisionState.initial(frame.rgb_low, config.transition) for frame in self.train_frames]

        self.optimizer = self.build_optimizer()
        self.logger.log(
            f"Training on {len(self.train_frames)} views ({len(self.heldout_frames)} held out), {len(self.gaussians)} Gaussians", "INFORMATIONAL"
        )

    @property
    def trains_enhancer(self):
        return not (self.config.disable_enhancer or self.config.preprocess_retinex)

    @property
    def uses_thermal(self):
        return not (self.config.disable_thermal or self.config.preprocess_retinex)

    def build_optimizer(self):
        enhancers = self.enhancers if self.trains_enhancer else None
        return SplatAdam.for_scene(self.gaussians, enhancers, self.config.lr, self.config.multipliers())

    def fit_enhancers(self, iterations):
        """Fit every enhancer on its own enhancement loss, then freeze the enhanced images."""
        named_groups = [("grid", [p.grid for p in self.enhancers.params]), ("gamma", [p.gamma_raw for p in self.enhancers.params])]
        optimizer = SplatAdam(named_groups, lr=self.config.lr * 10, multipliers=self.config.multipliers())
        optimizer.set_lr(self.config.lr * 10)
        for _ in tqdm(range(iterations), desc="enhancer", leave=False):
            optimizer.zero_grad(set_to_none=True)
            loss = 0.0
            for view, frame in enumerate(self.train_frames):
                enhanced, decomposition = self.enhancers.forward(view, frame.rgb_low)
                loss = loss + self.enhancers.loss(view, frame.rgb_low, decomposition, enhanced)
            loss.backward()
            optimizer.step()
        self.logger.log(f"Fitted {len(self.enhancers)} enhancers alone for {iterations} iterations", "INFORMATIONAL")
        return self.enhancers.enhance_all(self.train_frames)

    def pick_view(self, t):
        if self.config.view_sampling == "random":
            return int(torch.randint(len(self.train_frames), (1,), generator=self.generator))
        return (t - 1) % len(self.train_frames)

    def weights_at(self, t):
        weights = lambda_schedule(min(t, self.schedule.total), self.schedule)
        raw = list(weights.as_tuple())
        if not self.trains_enhancer:
            raw[0] = 0.0
        if not self.uses_thermal:
            raw[2] = 0.0
        return normalize_weights(raw) if raw != list(weights.as_tuple()) else weights

    def alpha_at(self, t):
        if self.fixed_targets is not None:
            return 1.0
        if self.config.disable_cyclic:
            return 0.0
        return alpha_blend(t, self.config.transition)

    def enhanced(self, view):
        """(I_enh, decomposition) of a training view; the raw low-light image when the enhancer is off."""
        frame = self.train_frames[view]
        if self.fixed_targets is not None:
            return self.fixed_targets[view], None
        if self.config.disable_enhancer:
            return frame.rgb_low, None
        return self.enhancers.forward(view, frame.rgb_low)

    def step(self, t):
        """One full iteration at global step t (1-based). Returns the log row."""
        view = self.pick_view(t)
        frame = self.train_frames[view]
        state = self.supervision[view]

        enhanced, decomposition = self.enhanced(view)
        alpha = self.alpha_at(t)
        gt = blend(state.gt_current, enhanced, alpha)

        rendered = self.renderer.render(self.gaussians, frame.camera).color
        gs_weights = list(self.config.gs_weights)
        if not self.uses_thermal:
            gs_weights[3] = 0.0

        parts = {
            "enh": self.enhancers.loss(view, frame.rgb_low, decomposition, enhanced) if decomposition is not None else rendered.new_zeros(()),
            "gs": gs_loss(rendered, gt, frame.thermal, gs_weights),
            "therm": thermal_loss(enhanced, rendered, frame.thermal, self.config.thermal_gamma) if self.uses_thermal else rendered.new_zeros(()),
        }
        weights = self.weights_at(t)
        try:
            loss = total_loss(parts, weights)
        except NumericalFailure as e:
            raise NumericalFailure(f"Iteration {t}: {e}") from e

        lr = cosine_lr(t, self.config.lr, self.config.lr_period, self.config.lr_mode, self.config.iters)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        try:
            self.optimizer.set_lr(lr)
            self.optimizer.step()
        except NumericalFailure as e:
            raise NumericalFailure(f"Iteration {t}: {e}") from e

        with torch.no_grad():
            margin = convex_margin(state.gt_current, enhanced.detach(), gt.detach())
        self.supervision[view] = SupervisionState(gt.detach(), t, state.transition)
        self.iteration = t

        if self.config.prune_every and t % self.config.prune_every == 0:
            self.gaussians, _ = prune(self.gaussians, self.config.prune_threshold, self.optimizer)

        return {
            "t": t,
            "view": frame.view_id,
            "alpha": alpha,
            "lambda_enh": weights.enh,
            "lambda_gs": weights.gs,
            "lambda_therm": weights.therm,
            "loss_enh": float(parts["enh"].detach()),
            "loss_gs": float(parts["gs"].detach()),
            "loss_therm": float(parts["therm"].detach()),
            "loss_total": float(loss.detach()),
            "lr": lr,
            "gt_min_margin": margin,
        }

    def train(self, until=None, out_dir=None, progress=True):
        """Run iterations self.iteration + 1 .. until, logging and checkpointing into out_dir."""
        until = self.config.iters if until is None else until
        log_path = os.path.join(out_dir, "log.csv") if out_dir else None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

        bar = tqdm(range(self.iteration + 1, until + 1), desc=self.scene_name, disable=not progress)
        for t in bar:
            row = self.step(t)
            self.rows.append(row)
            if log_path:
                append_log(log_path, [row])
            if out_dir and self.config.checkpoint_every and t % self.config.checkpoint_every == 0:
                self.save(os.path.join(out_dir, "checkpoints", f"ckpt_{t:06d}.dtgs"))
            bar.set_postfix({"loss": f"{row['loss_total']:.4f}", "alpha": f"{row['alpha']:.3f}", "n": len(self.gaussians)})

        if out_dir:
            self.save(os.path.join(out_dir, "checkpoints", "final.dtgs"))
        return self.rows

    def snapshot(self):
        meta = {
            "scene": self.scene_name,
            "train_view_ids": [frame.view_id for frame in self.train_frames],
            "settings": self.config.to_settings(),
        }
        return capture(self.iteration, self.gaussians, self.enhancers, self.optimizer, self.supervision, self.generator, self.config.config_hash(), meta)

    def save(self, path):
        return save_checkpoint(path, self.snapshot())

    def restore(self, checkpoint):
        """Continue from a checkpoint of the same scene: parameters, moments, targets and the sampling stream."""
        view_ids = [frame.view_id for frame in self.train_frames]
        if checkpoint.meta.get("train_view_ids") != view_ids:
            raise ValidationError(f"Checkpoint trained views {checkpoint.meta.get('train_view_ids')} do not match scene views {view_ids}")
        self.gaussians = checkpoint.gaussians()
        self.enhancers = checkpoint.enhancers(self.config.enh_weights)
        self.supervision = checkpoint.supervision()
        self.optimizer = self.build_optimizer()
        checkpoint.restore_optimizer(self.optimizer)
        checkpoint.restore_generator(self.generator)
        if self.fixed_targets is not None:
            self.fixed_targets = [state.gt_current.clone() for state in self.supervision]
        self.iteration = checkpoint.iteration
        self.logger.log(f"Resumed at iteration {self.iteration} with {len(self.gaussians)} Gaussians", "INFORMATIONAL")
        return self

    def resume(self, path):
        return self.restore(load_checkpoint(path, self.config.config_hash()))

    @torch.no_grad()
    def render(self, frame):
        return self.renderer.render(self.gaussians, frame.camera)

    @torch.no_grad()
    def evaluate(self, split="heldout"):
        """PSNR/SSIM of renders against the bright reference, or the view's current target GT(t) when it has none."""
        frames = self.heldout_frames if split == "heldout" else self.train_frames
        if not frames:
            raise ValidationError(f"Split '{split}' holds no views")
        report = MetricReport(self.scene_name)
        for index, frame in enumerate(frames):
            if frame.rgb_gt_bright is not None:
                reference = frame.rgb_gt_bright
            elif split == "train":
                reference = self.supervision[index].gt_current
            else:
                # held-out targets are never blended, GT(t) stays the low-light input
                self.logger.log(f"View {frame.view_id}: no bright reference, scoring against the low-light input", "WARNING")
                reference = frame.rgb_low
            report.add(frame.view_id, self.render(frame).color, reference)
        return report

    @torch.no_grad()
    def enhanced_images(self):
        return [self.enhanced(view)[0].detach() for view in range(len(self.train_frames))]

    def consistency(self):
        """(spread of I_enh, spread of I_low) of per-view mean luminance over the training views."""
        return luminance_spread(self.enhanced_images()), luminance_spread([frame.rgb_low for frame in self.train_frames])


def append_log(path, rows):
    new_file = not os.path.isfile(path)
    with open(path, "a", encoding="utf-8", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=LOG_COLUMNS)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(value) if isinstance(value, float) else value) for key, value in row.items()})


def read_log(path):
    if not os.path.isfile(path):
        raise ValidationError(f"Training log not found at {path}")
    with open(path, "r", encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file)
        missing = set(LOG_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"Training log {path} lacks columns {sorted(missing)}")
        return [{key: (int(value) if key in ("t", "view") else float(value)) for key, value in row.items()} for row in reader]


def validate_log(rows, tolerance=1e-12):
    """Check the weight, alpha and target-blend invariants of every logged iteration."""
    previous_alpha = 0.0
    for row in rows:
        weights = normalize_weights((row["lambda_enh"], row["lambda_gs"], row["lambda_therm"]))
        if max(abs(a - b) for a, b in zip(weights.as_tuple(), (row["lambda_enh"], row["lambda_gs"], row["lambda_therm"]))) > 1e-9:
            raise ValidationError(f"Iteration {row['t']}: logged weights are not normalized")
        weights.validate()
        if row["alpha"] < previous_alpha or not 0.0 <= row["alpha"] <= 1.0:
            raise ValidationError(f"Iteration {row['t']}: alpha {row['alpha']} breaks monotonicity")
        if row["gt_min_margin"] < -tolerance:
            raise ValidationError(f"Iteration {row['t']}: target left the convex blend bound by {-row['gt_min_margin']}")
        previous_alpha = row["alpha"]
    return True


def write_summary(path, trainer, initial, final):
    spread_enh, spread_low = trainer.consistency()
    summary = {
        "scene": trainer.scene_name,
        "iterations": trainer.iteration,
        "gaussians": len(trainer.gaussians),
        "heldout_psnr_initial": initial.mean_psnr if initial else None,
        "heldout_psnr_final": final.mean_psnr if final else None,
        "heldout_ssim_final": final.mean_ssim if final else None,
        "luminance_spread_enhanced": spread_enh,
        "luminance_spread_low": spread_low,
        "config_hash": trainer.config.config_hash(),
    }
    with open(path, "w", encoding="utf-8") as file:
        json.dump(summary, file, indent=4)
    return summary
