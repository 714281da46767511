import os

from ..thermasplat import Logger
from .dataset import open_scene
from .run_config import RUN_SETTINGS, RunConfig
from .trainer import Trainer, write_summary


class TrainCommand:
    """Joint enhancement and reconstruction on one scene; writes log.csv, checkpoints and summary.json into --out."""

    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                **RUN_SETTINGS,
                "resume": ["STRING", ""],
            },
        }

    RETURN_TYPES = ("CHECKPOINT", "CSV")
    FUNCTION = "train"
    CATEGORY = "thermasplat/training"

    @staticmethod
    def can_evaluate(trainer):
        return bool(trainer.heldout_frames)

    def train(self, config_path=None, resume=None, **overrides):
        config = RunConfig.resolve(config_path, overrides)
        self.logger.log(f"Train: {config.summary()}", "INFORMATIONAL")

        frames, points, colors, name = open_scene(config.scene, config.seed, config.image_size())
        trainer = Trainer(config, frames, points, colors, name)
        if resume:
            trainer.resume(resume)

        initial = trainer.evaluate() if self.can_evaluate(trainer) else None
        if initial:
            self.logger.log(f"Held-out PSNR before training: {initial.mean_psnr:.2f} dB", "INFORMATIONAL")

        trainer.train(out_dir=config.out)

        final = None
        if self.can_evaluate(trainer):
            final = trainer.evaluate()
            final.write_csv(os.path.join(config.out, "metrics_heldout.csv"))
            self.logger.log(f"Held-out PSNR after training: {final.mean_psnr:.2f} dB, SSIM {final.mean_ssim:.4f}", "INFORMATIONAL")
        else:
            self.logger.log("No held-out views, skipping evaluation", "WARNING")

        write_summary(os.path.join(config.out, "summary.json"), trainer, initial, final)
        return (os.path.join(config.out, "checkpoints", "final.dtgs"), os.path.join(config.out, "log.csv"))
