import os

import torch

from ..thermasplat import Logger, ValidationError
from .checkpoint import load_checkpoint
from .dataset import load_poses, open_scene, write_png
from .retinex_enhancer import enhance
from .run_config import RunConfig, parse_resolution
from .scene_core import Camera
from .splat_renderer import SplatRenderer


def parse_view_ids(text):
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ValidationError(f"View ids must be comma separated integers, got {text!r}") from e


def rescale_camera(camera, size):
    if not size:
        return camera
    width, height = size
    sx, sy = width / camera.width, height / camera.height
    return Camera(camera.fx * sx, camera.fy * sy, camera.cx * sx, camera.cy * sy, width, height, camera.rotation, camera.translation)


class RenderCommand:
    """
    Render RGB and transmittance for every requested pose of a checkpoint.

    Training views also get their enhanced image, which needs the scene the checkpoint was trained on.
    """

    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "checkpoint": ["STRING", ""],
            },
            "optional": {
                "poses": ["STRING", ""],
                "views": ["STRING", ""],
                "out": ["STRING", "renders"],
                "resolution": ["STRING", ""],
                "scene": ["STRING", ""],
            },
        }

    RETURN_TYPES = ("IMAGE_DIR",)
    FUNCTION = "render"
    CATEGORY = "thermasplat/evaluation"

    def render(self, checkpoint, poses=None, views=None, out=None, resolution=None, scene=None, config_path=None):
        state = load_checkpoint(checkpoint)
        config = RunConfig.from_settings(state.meta["settings"])
        scene = scene or config.scene
        out = out or "renders"

        cameras = load_poses(poses) if poses else self.scene_cameras(config, scene)
        wanted = parse_view_ids(views)
        if wanted is not None:
            known = {view_id for view_id, _ in cameras}
            unknown = [view_id for view_id in wanted if view_id not in known]
            if unknown:
                raise ValidationError(f"Unknown view ids {unknown}, poses hold {sorted(known)}")
            cameras = [(view_id, camera) for view_id, camera in cameras if view_id in wanted]
        if not cameras:
            self.logger.log("No poses to render", "WARNING")
            return (out,)

        os.makedirs(out, exist_ok=True)
        size = parse_resolution(resolution)
        gaussians = state.gaussians()
        renderer = SplatRenderer(config.background)
        with torch.no_grad():
            for view_id, camera in cameras:
                output = renderer.render(gaussians, rescale_camera(camera, size))
                write_png(output.color.clamp(0, 1), os.path.join(out, f"{view_id:03d}_render.png"))
                write_png(output.final_transmittance, os.path.join(out, f"{view_id:03d}_transmittance.png"))

        self.write_enhanced(state, config, scene, dict(cameras), out)
        self.logger.log(f"Rendered {len(cameras)} views with {len(gaussians)} Gaussians to {out}", "INFORMATIONAL")
        return (out,)

    @staticmethod
    def scene_cameras(config, scene):
        frames = open_scene(scene, config.seed, config.image_size())[0]
        return [(frame.view_id, frame.camera) for frame in frames]

    def write_enhanced(self, state, config, scene, cameras, out):
        train_ids = state.meta.get("train_view_ids", [])
        requested = [view_id for view_id in train_ids if view_id in cameras]
        if not requested:
            return
        frames = {frame.view_id: frame for frame in open_scene(scene, config.seed, config.image_size())[0]}
        enhancers = state.enhancers(config.enh_weights)
        with torch.no_grad():
            for view_id in requested:
                frame = frames.get(view_id)
                if frame is None:
                    raise ValidationError(f"View {view_id}: trained in the checkpoint but missing from scene {scene or 'example'}")
                if not torch.allclose(frame.camera.world_to_camera(), cameras[view_id].world_to_camera(), atol=1e-9):
                    raise ValidationError(f"View {view_id}: pose differs from the one the checkpoint was trained with")
                enhanced = enhance(frame.rgb_low, enhancers[train_ids.index(view_id)])
                write_png(enhanced, os.path.join(out, f"{view_id:03d}_enhanced.png"))
