import csv
import os

from ..thermasplat import Logger, ValidationError
from .dataset import open_scene
from .run_config import RUN_SETTINGS, RunConfig
from .trainer import Trainer

VARIANTS = {
    "full": {},
    "no_cyclic": {"disable_cyclic": True},
    "no_thermal": {"disable_thermal": True},
    "preprocess_retinex": {"preprocess_retinex": True},
    # thermal loss and GS loss on the raw low-light views, no enhancer and no cyclic target
    "thermal_gaussian": {"disable_enhancer": True, "disable_cyclic": True},
}


class AblateCommand:
    """Train every variant on each seeded scene with a shared seed and tabulate held-out SSIM / PSNR."""

    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                **RUN_SETTINGS,
                "scenes": ["INT", 3, 1, 100, 1, False],
                "variants": ["STRING", ",".join(VARIANTS)],
            },
        }

    RETURN_TYPES = ("CSV",)
    FUNCTION = "ablate"
    CATEGORY = "thermasplat/training"

    @staticmethod
    def parse_variants(text):
        names = [name.strip() for name in (text or ",".join(VARIANTS)).split(",") if name.strip()]
        unknown = [name for name in names if name not in VARIANTS]
        if unknown:
            raise ValidationError(f"Unknown variants {unknown}, expected some of {list(VARIANTS)}")
        return names

    def ablate(self, config_path=None, scenes=None, variants=None, **overrides):
        config = RunConfig.resolve(config_path, overrides)
        names = self.parse_variants(variants)
        scenes = scenes or 3
        self.logger.log(f"Ablation over {scenes} scenes, variants {names}: {config.summary()}", "INFORMATIONAL")

        rows = []
        for offset in range(scenes):
            seed = config.seed + offset
            frames, points, colors, scene_name = open_scene(config.scene, seed, config.image_size())
            if not scene_name.endswith(f"-{seed}"):
                scene_name = f"{scene_name}-{seed}"
            for variant in names:
                variant_config = config.with_overrides(seed=seed, **VARIANTS[variant])
                trainer = Trainer(variant_config, frames, points, colors, scene_name)
                trainer.train(out_dir=os.path.join(config.out, scene_name, variant))
                report = trainer.evaluate()
                rows.append({"scene": scene_name, "variant": variant, "ssim": report.mean_ssim, "psnr_db": report.mean_psnr})
                self.logger.log(f"{scene_name} {variant}: SSIM {report.mean_ssim:.4f}, PSNR {report.mean_psnr:.2f} dB", "INFORMATIONAL")

        path = os.path.join(config.out, "ablation.csv")
        write_ablation(path, rows)
        return (path,)


def write_ablation(path, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["scene", "variant", "ssim", "psnr_db"])
        for row in rows:
            writer.writerow([row["scene"], row["variant"], f"{row['ssim']:.6f}", f"{row['psnr_db']:.6f}"])
    return path
