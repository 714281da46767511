import os

from ..thermasplat import Logger
from .checkpoint import load_checkpoint
from .dataset import open_scene
from .run_config import RunConfig
from .trainer import Trainer, read_log, validate_log


class EvalCommand:
    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "checkpoint": ["STRING", ""],
            },
            "optional": {
                "scene": ["STRING", ""],
                "split": ["STRING", "heldout", ["heldout", "train"]],
                "out": ["STRING", ""],
                "log": ["STRING", ""],
            },
        }

    RETURN_TYPES = ("CSV",)
    FUNCTION = "evaluate"
    CATEGORY = "thermasplat/evaluation"

    @staticmethod
    def default_log(checkpoint):
        """log.csv of the run a checkpoint under <out>/checkpoints/ belongs to."""
        return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(checkpoint))), "log.csv")

    def evaluate(self, checkpoint, scene=None, split=None, out=None, log=None, config_path=None):
        split = split or "heldout"
        state = load_checkpoint(checkpoint)
        # the enhancers come from the checkpoint, no need to refit them
        config = RunConfig.from_settings(state.meta["settings"]).with_overrides(preprocess_retinex=False)
        frames, points, colors, name = open_scene(scene or config.scene, config.seed, config.image_size())

        trainer = Trainer(config, frames, points, colors, name).restore(state)
        report = trainer.evaluate(split)

        out = out or os.path.dirname(os.path.dirname(os.path.abspath(checkpoint)))
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"metrics_{split}.csv")
        report.write_csv(path)
        self.logger.log(f"{name} [{split}] {len(report.view_ids)} views: PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}", "INFORMATIONAL")

        log = log or self.default_log(checkpoint)
        if os.path.isfile(log):
            rows = read_log(log)
            validate_log(rows)
            self.logger.log(f"Validated schedule invariants on {len(rows)} logged iterations", "INFORMATIONAL")
        return (path,)
