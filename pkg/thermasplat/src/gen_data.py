import os

from ..thermasplat import Logger, Utility
from .dataset import EXAMPLE_SCENE, SyntheticSceneSpec, generate_scene, save_scene
from .run_config import parse_resolution


class GenDataCommand:
    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                "spec": ["STRING", ""],
                "out": ["STRING", "scenes/example"],
                "seed": ["INT", 0, 0, 2147483647, 1, False],
                "resolution": ["STRING", ""],
                "workers": ["INT", 0, 0, 256, 1, False],
            },
        }

    RETURN_TYPES = ("SCENE_DIR",)
    FUNCTION = "generate"
    CATEGORY = "thermasplat/data"

    def generate(self, spec=None, out=None, seed=None, resolution=None, workers=None, config_path=None):
        spec_path = spec or EXAMPLE_SCENE
        # everything is validated before the first file is written
        scene_spec = SyntheticSceneSpec.from_json(spec_path)
        if seed is not None:
            scene_spec.seed = seed
        size = parse_resolution(resolution)
        if size:
            scene_spec.width, scene_spec.height = size
        scene_spec.validate()
        out = out or self.INPUT_TYPES()["optional"]["out"][1]

        generated = generate_scene(scene_spec, workers or 0)
        save_scene(generated.frames, out, generated.meta, generated.points, generated.point_colors)

        for frame in generated.frames:
            self.logger.log(
                f"View {frame.view_id:03d}: low luma {float(Utility.luminance(frame.rgb_low).mean()):.4f}, "
                f"bright luma {float(Utility.luminance(frame.rgb_gt_bright).mean()):.4f}, "
                f"thermal mean {float(frame.thermal.mean()):.4f}",
                "INFORMATIONAL",
            )
        self.logger.log(f"Wrote {len(generated.frames)} views from {os.path.basename(spec_path)} to {out}", "INFORMATIONAL")
        return (out,)
