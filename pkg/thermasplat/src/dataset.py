"""
Synthetic RGB + thermal multi-view scenes, the on-disk scene format and Gaussian initialization.

A scene directory holds:
    views/NNN_rgb_low.png, views/NNN_thermal.png, optional views/NNN_rgb_gt.png
    poses.json   per-view world_to_camera (4x4, row major), intrinsics and image size
    meta.json    generator spec or provenance
    points.json  optional initialization point cloud (positions and colors)
"""

import functools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
from PIL import Image

from ..thermasplat import ConfigReader, Logger, ValidationError
from .scene_core import DTYPE, Camera, GaussianModel, MultiViewFrame, logit

DEFAULT_LIGHT = (0.4, -0.3, 0.85)
AMBIENT = 0.15
PRIMITIVE_TYPES = ("sphere", "box", "plane")
EXAMPLE_SCENE = os.path.join(ConfigReader.ROOT_DIR, "settings", "example_scene.json")


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    primitives: list = field(default_factory=list)
    num_views: int = 16
    width: int = 160
    height: int = 120
    gain: float = 0.3
    gamma_dark: float = 1.2
    noise_sigma: float = 0.01
    orbit_radius: float = 3.0
    orbit_height: float = 1.2
    target: tuple = (0.0, 0.0, 0.3)
    fov_degrees: float = 60.0
    num_points: int = 2000
    jitter: float = 0.05

    def validate(self):
        if not self.primitives:
            raise ValidationError("Scene spec needs at least one primitive")
        for i, primitive in enumerate(self.primitives):
            if primitive.get("type") not in PRIMITIVE_TYPES:
                raise ValidationError(f"Primitive {i} has unknown type {primitive.get('type')!r}, expected one of {PRIMITIVE_TYPES}")
            temperature = primitive.get("temperature", 0.0)
            if not 0.0 <= temperature <= 1.0:
                raise ValidationError(f"Primitive {i} temperature {temperature} outside [0, 1]")
        if self.num_views < 2:
            raise ValidationError(f"Scene spec needs at least 2 views, got {self.num_views}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"Image size must be positive, got {self.width}x{self.height}")
        check_darkening(self.gain, self.gamma_dark, self.noise_sigma)
        return self

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as file:
                data = json.load(file)
        except FileNotFoundError as e:
            raise ValidationError(f"Scene spec not found at {path}") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"Error decoding scene spec {path}: {e}") from e
        known = {key: value for key, value in data.items() if key in cls.__dataclass_fields__}
        if "target" in known:
            known["target"] = tuple(known["target"])
        return cls(**known).validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class GeneratedScene:
    frames: list
    points: torch.Tensor  # (P, 3)
    point_colors: torch.Tensor  # (P, 3)
    meta: dict = field(default_factory=dict)


def check_darkening(gain, gamma_dark, sigma):
    if not 0.0 < gain <= 1.0:
        raise ValidationError(f"Darkening gain must lie in (0, 1], got {gain}")
    if gamma_dark < 1.0:
        raise ValidationError(f"Darkening gamma must be at least 1, got {gamma_dark}")
    if sigma < 0.0:
        raise ValidationError(f"Noise sigma must be non-negative, got {sigma}")


def darken(bright, gain, gamma_dark, sigma, seed):
    """I_low = clamp((gain * I)^gamma_dark + N(0, sigma), 0, 1), deterministic per seed."""
    check_darkening(gain, gamma_dark, sigma)
    low = (gain * bright).pow(gamma_dark)
    if sigma > 0:
        generator = torch.Generator().manual_seed(int(seed))
        low = low + sigma * torch.randn(bright.shape, generator=generator, dtype=DTYPE)
    return low.clamp(0.0, 1.0)


def _jittered_primitives(spec, generator):
    primitives = []
    for primitive in spec.primitives:
        primitive = dict(primitive)
        if spec.jitter > 0 and primitive["type"] != "plane":
            shift = spec.jitter * (2 * torch.rand(3, generator=generator, dtype=DTYPE) - 1)
            shift[2] = 0.0
            primitive["center"] = [float(c + s) for c, s in zip(primitive["center"], shift)]
            tint = 1 + spec.jitter * (2 * torch.rand(3, generator=generator, dtype=DTYPE) - 1)
            primitive["albedo"] = [float(min(1.0, max(0.0, a * k))) for a, k in zip(primitive["albedo"], tint)]
        primitives.append(primitive)
    return primitives


def _intersect(primitive, origin, directions):
    """Hit distance (inf on a miss) and unit normals for rays origin + t * directions."""
    inf = torch.full(directions.shape[:1], math.inf, dtype=DTYPE)
    kind = primitive["type"]

    if kind == "sphere":
        center = torch.tensor(primitive["center"], dtype=DTYPE)
        radius = float(primitive["radius"])
        oc = origin - center
        b = directions @ oc
        c = float(oc @ oc) - radius * radius
        disc = b * b - c
        root = torch.sqrt(disc.clamp(min=0))
        near, far = -b - root, -b + root
        t = torch.where(near > 1e-6, near, far)
        t = torch.where((disc >= 0) & (t > 1e-6), t, inf)
        hit = origin + directions * t.clamp(max=1e6).unsqueeze(-1)
        return t, (hit - center) / radius

    if kind == "box":
        center = torch.tensor(primitive["center"], dtype=DTYPE)
        half = torch.tensor(primitive["half_size"], dtype=DTYPE)
        safe = torch.where(directions.abs() < 1e-12, torch.full_like(directions, 1e-12), directions)
        t0 = (center - half - origin) / safe
        t1 = (center + half - origin) / safe
        t_near = torch.minimum(t0, t1)
        t_far = torch.maximum(t0, t1)
        entry, axis = t_near.max(dim=-1)
        exit_ = t_far.min(dim=-1).values
        t = torch.where((entry <= exit_) & (entry > 1e-6), entry, inf)
        normal = torch.zeros_like(directions)
        normal[torch.arange(directions.shape[0]), axis] = -torch.sign(safe[torch.arange(directions.shape[0]), axis])
        return t, normal

    point = torch.tensor(primitive["point"], dtype=DTYPE)
    normal = torch.tensor(primitive["normal"], dtype=DTYPE)
    normal = normal / normal.norm()
    extent = float(primitive.get("half_extent", 2.0))
    facing = directions @ normal
    safe = torch.where(facing.abs() < 1e-12, torch.full_like(facing, 1e-12), facing)
    t = ((point - origin) @ normal) / safe
    hit = origin + directions * t.clamp(-1e6, 1e6).unsqueeze(-1)
    inside = (hit - point).abs().max(dim=-1).values <= extent
    t = torch.where((t > 1e-6) & inside, t, inf)
    return t, normal.expand_as(directions)


def camera_rays(camera):
    """World-space unit directions for every pixel (row major) and the camera center."""
    v, u = torch.meshgrid(torch.arange(camera.height, dtype=DTYPE), torch.arange(camera.width, dtype=DTYPE), indexing="ij")
    local = torch.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, torch.ones_like(u)], dim=-1).reshape(-1, 3)
    directions = local @ camera.rotation  # R^T d for each row
    return directions / directions.norm(dim=-1, keepdim=True), camera.center()


def trace(primitives, camera, light=DEFAULT_LIGHT):
    """Bright Lambertian RGB and emitted thermal image of the nearest hit per pixel."""
    directions, origin = camera_rays(camera)
    light = torch.tensor(light, dtype=DTYPE)
    light = light / light.norm()

    nearest = torch.full(directions.shape[:1], math.inf, dtype=DTYPE)
    rgb = torch.zeros(directions.shape[0], 3, dtype=DTYPE)
    thermal = torch.zeros(directions.shape[0], dtype=DTYPE)
    for primitive in primitives:
        t, normal = _intersect(primitive, origin, directions)
        # two-sided surfaces face the camera
        normal = torch.where(((normal * directions).sum(-1) > 0).unsqueeze(-1), -normal, normal)
        closer = t < nearest
        shade = AMBIENT + (1 - AMBIENT) * (normal @ light).clamp(min=0)
        albedo = torch.tensor(primitive["albedo"], dtype=DTYPE)
        rgb = torch.where(closer.unsqueeze(-1), shade.unsqueeze(-1) * albedo, rgb)
        thermal = torch.where(closer, torch.full_like(thermal, float(primitive.get("temperature", 0.0))), thermal)
        nearest = torch.minimum(nearest, t)
    shape = (camera.height, camera.width)
    return rgb.reshape(shape + (3,)).clamp(0, 1), thermal.reshape(shape)


def _surface_area(primitive):
    if primitive["type"] == "sphere":
        return 4 * math.pi * primitive["radius"] ** 2
    if primitive["type"] == "box":
        x, y, z = (2 * h for h in primitive["half_size"])
        return 2 * (x * y + y * z + x * z)
    return (2 * primitive.get("half_extent", 2.0)) ** 2


def sample_surface_points(primitives, count, generator):
    """Points spread over primitive surfaces in proportion to area, colored by albedo."""
    areas = torch.tensor([_surface_area(p) for p in primitives], dtype=DTYPE)
    owners = torch.multinomial(areas / areas.sum(), count, replacement=True, generator=generator)
    points = torch.zeros(count, 3, dtype=DTYPE)
    colors = torch.zeros(count, 3, dtype=DTYPE)
    for index, primitive in enumerate(primitives):
        mine = (owners == index).nonzero().squeeze(-1)
        n = mine.numel()
        if n == 0:
            continue
        colors[mine] = torch.tensor(primitive["albedo"], dtype=DTYPE)
        if primitive["type"] == "sphere":
            direction = torch.randn(n, 3, generator=generator, dtype=DTYPE)
            direction = direction / direction.norm(dim=-1, keepdim=True)
            points[mine] = torch.tensor(primitive["center"], dtype=DTYPE) + primitive["radius"] * direction
        elif primitive["type"] == "box":
            half = torch.tensor(primitive["half_size"], dtype=DTYPE)
            local = (2 * torch.rand(n, 3, generator=generator, dtype=DTYPE) - 1) * half
            axis = torch.randint(0, 3, (n,), generator=generator)
            side = torch.where(torch.rand(n, generator=generator) < 0.5, -1.0, 1.0).to(DTYPE)
            local[torch.arange(n), axis] = side * half[axis]
            points[mine] = torch.tensor(primitive["center"], dtype=DTYPE) + local
        else:
            point = torch.tensor(primitive["point"], dtype=DTYPE)
            normal = torch.tensor(primitive["normal"], dtype=DTYPE)
            normal = normal / normal.norm()
            helper = torch.tensor([1.0, 0.0, 0.0] if abs(float(normal[0])) < 0.9 else [0.0, 1.0, 0.0], dtype=DTYPE)
            e1 = torch.linalg.cross(normal, helper)
            e1 = e1 / e1.norm()
            e2 = torch.linalg.cross(normal, e1)
            extent = primitive.get("half_extent", 2.0)
            uv = (2 * torch.rand(n, 2, generator=generator, dtype=DTYPE) - 1) * extent
            points[mine] = point + uv[:, :1] * e1 + uv[:, 1:] * e2
    return points, colors


def orbit_cameras(spec):
    cameras = []
    for k in range(spec.num_views):
        angle = 2 * math.pi * k / spec.num_views
        eye = (spec.orbit_radius * math.cos(angle), spec.orbit_radius * math.sin(angle), spec.orbit_height)
        cameras.append(Camera.look_at(eye, spec.target, spec.width, spec.height, spec.fov_degrees))
    return cameras


def _render_view(spec, primitives, view_id, camera):
    bright, thermal = trace(primitives, camera)
    # thermal is final before any darkening happens
    low = darken(bright, spec.gain, spec.gamma_dark, spec.noise_sigma, seed=spec.seed * 1000 + view_id)
    return MultiViewFrame(view_id, low, thermal, camera, bright)


def generate_scene(spec, workers=0):
    """
    Frames with bright reference, thermal and darkened RGB, plus a surface point cloud. Deterministic per seed.

    Views render on a thread pool of `workers` threads, one per CPU core (at most one per view) when 0;
    1 renders them one after another. The output does not depend on the worker count.
    """
    spec.validate()
    if workers < 0:
        raise ValidationError(f"Worker count must be non-negative, got {workers}")
    generator = torch.Generator().manual_seed(int(spec.seed))
    primitives = _jittered_primitives(spec, generator)

    cameras = orbit_cameras(spec)
    render = functools.partial(_render_view, spec, primitives)
    workers = workers or min(len(cameras), os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            frames = list(pool.map(render, range(len(cameras)), cameras))
    else:
        frames = [render(view_id, camera) for view_id, camera in enumerate(cameras)]

    points, colors = sample_surface_points(primitives, spec.num_points, generator)
    Logger().log(f"Generated {len(frames)} views at {spec.width}x{spec.height} on {workers} workers, {len(points)} points", "INFORMATIONAL")
    return GeneratedScene(frames, points, colors, {"generator": spec.to_dict(), "primitives": primitives})


def init_gaussians(points, colors, k_neighbors=3):
    """One isotropic Gaussian per point, scale = mean distance to the k nearest neighbors."""
    count = points.shape[0]
    if count < k_neighbors + 1:
        raise ValidationError(f"Need at least {k_neighbors + 1} points for {k_neighbors} neighbors, got {count}")
    points = points.to(DTYPE)
    distances = torch.cdist(points, points)
    nearest = torch.topk(distances, k_neighbors + 1, dim=1, largest=False).values[:, 1:]
    scale = nearest.mean(dim=1).clamp(min=1e-7)

    log_scale = torch.log(scale).unsqueeze(-1).expand(count, 3)
    rotation = torch.zeros(count, 4, dtype=DTYPE)
    rotation[:, 0] = 1.0
    opacity_logit = torch.full((count,), float(logit(0.1)), dtype=DTYPE)
    color_raw = logit(colors.to(DTYPE).clamp(1e-3, 1 - 1e-3))
    return GaussianModel(points, log_scale, rotation, opacity_logit, color_raw)


def write_png(image, path):
    array = np.round(image.detach().cpu().numpy() * 255.0).clip(0, 255).astype(np.uint8)
    Image.fromarray(array).save(path)


def read_png(path, view_id, channels):
    if not os.path.isfile(path):
        raise ValidationError(f"View {view_id}: missing file {os.path.basename(path)}")
    with Image.open(path) as image:
        array = np.asarray(image.convert("RGB" if channels == 3 else "L"), dtype=np.float64) / 255.0
    return torch.from_numpy(array.copy())


def view_paths(directory, view_id):
    stem = os.path.join(directory, "views", f"{view_id:03d}")
    return f"{stem}_rgb_low.png", f"{stem}_thermal.png", f"{stem}_rgb_gt.png"


def save_scene(frames, directory, meta=None, points=None, point_colors=None):
    os.makedirs(os.path.join(directory, "views"), exist_ok=True)
    poses = {"views": []}
    for frame in frames:
        low_path, thermal_path, gt_path = view_paths(directory, frame.view_id)
        write_png(frame.rgb_low, low_path)
        write_png(frame.thermal, thermal_path)
        if frame.rgb_gt_bright is not None:
            write_png(frame.rgb_gt_bright, gt_path)
        camera = frame.camera
        poses["views"].append(
            {
                "id": frame.view_id,
                "world_to_camera": [float(x) for x in camera.world_to_camera().reshape(-1)],
                "intrinsics": {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy},
                "width": camera.width,
                "height": camera.height,
            }
        )
    with open(os.path.join(directory, "poses.json"), "w", encoding="utf-8") as file:
        json.dump(poses, file, indent=4)
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as file:
        json.dump(meta or {"provenance": "thermasplat"}, file, indent=4)
    if points is not None:
        with open(os.path.join(directory, "points.json"), "w", encoding="utf-8") as file:
            json.dump({"positions": points.tolist(), "colors": point_colors.tolist()}, file)
    return directory


@dataclass
class LoadedScene:
    frames: list
    points: Optional[torch.Tensor]
    point_colors: Optional[torch.Tensor]
    meta: dict


def _read_json(path, what):
    if not os.path.isfile(path):
        raise ValidationError(f"Missing {what} at {path}")
    try:
        with open(path, "r", encoding="utf-8") as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Malformed {what} {path}: {e}") from e


def load_poses(path):
    """[(view id, Camera)] from a poses.json file, or from the poses.json inside a scene directory."""
    if os.path.isdir(path):
        path = os.path.join(path, "poses.json")
    poses = _read_json(path, "poses.json")
    cameras = []
    for entry in poses.get("views", []):
        view_id = entry.get("id")
        try:
            intrinsics = entry["intrinsics"]
            camera = Camera.from_matrix(
                entry["world_to_camera"],
                (intrinsics["fx"], intrinsics["fy"], intrinsics["cx"], intrinsics["cy"]),
                entry["width"],
                entry["height"],
            )
        except (KeyError, TypeError, RuntimeError) as e:
            raise ValidationError(f"View {view_id}: malformed pose entry ({e})") from e
        cameras.append((view_id, camera))
    return cameras


def load_scene(directory):
    cameras = load_poses(os.path.join(directory, "poses.json"))
    meta_path = os.path.join(directory, "meta.json")
    meta = _read_json(meta_path, "meta.json") if os.path.isfile(meta_path) else {}

    frames = []
    for view_id, camera in cameras:
        low_path, thermal_path, gt_path = view_paths(directory, view_id)
        low = read_png(low_path, view_id, 3)
        thermal = read_png(thermal_path, view_id, 1)
        bright = read_png(gt_path, view_id, 3) if os.path.isfile(gt_path) else None
        for name, image in (("rgb_low", low), ("thermal", thermal), ("rgb_gt", bright)):
            if image is not None and tuple(image.shape[:2]) != (camera.height, camera.width):
                raise ValidationError(f"View {view_id}: {name} is {image.shape[1]}x{image.shape[0]}, poses.json declares {camera.width}x{camera.height}")
        frames.append(MultiViewFrame(view_id, low, thermal, camera, bright))

    points = colors = None
    points_path = os.path.join(directory, "points.json")
    if os.path.isfile(points_path):
        data = _read_json(points_path, "points.json")
        points = torch.tensor(data["positions"], dtype=DTYPE)
        colors = torch.tensor(data["colors"], dtype=DTYPE)

    Logger().log(f"Loaded {len(frames)} views from {directory}", "INFORMATIONAL")
    return LoadedScene(frames, points, colors, meta)


def fallback_points(frames, count, generator):
    """Gray points in a ball around the point the cameras look at, when a scene ships no point cloud."""
    centers = torch.stack([frame.camera.center() for frame in frames])
    forwards = torch.stack([frame.camera.rotation[2] for frame in frames])
    # least-squares point closest to every optical axis
    eye = torch.eye(3, dtype=DTYPE)
    projectors = eye - forwards.unsqueeze(-1) * forwards.unsqueeze(-2)
    focus = torch.linalg.solve(projectors.sum(0), (projectors @ centers.unsqueeze(-1)).sum(0)).squeeze(-1)
    radius = 0.5 * float((centers - focus).norm(dim=-1).mean())
    direction = torch.randn(count, 3, generator=generator, dtype=DTYPE)
    direction = direction / direction.norm(dim=-1, keepdim=True)
    lengths = radius * torch.rand(count, 1, generator=generator, dtype=DTYPE).pow(1 / 3)
    return focus + lengths * direction, torch.full((count, 3), 0.5, dtype=DTYPE)


def split_views(frames, every=8):
    """(train, held_out): every `every`-th view, starting at 0, is held out."""
    held_out = [frame for i, frame in enumerate(frames) if i % every == 0]
    train = [frame for i, frame in enumerate(frames) if i % every != 0]
    return train, held_out


def rescale_frames(frames, width, height):
    """Resample every image to width x height and scale the intrinsics to match."""
    rescaled = []
    for frame in frames:
        camera = frame.camera
        if (camera.width, camera.height) == (width, height):
            rescaled.append(frame)
            continue
        sx, sy = width / camera.width, height / camera.height
        scaled = Camera(camera.fx * sx, camera.fy * sy, camera.cx * sx, camera.cy * sy, width, height, camera.rotation, camera.translation)

        def resample(image):
            if image is None:
                return None
            planar = image.unsqueeze(-1) if image.dim() == 2 else image
            out = torch.nn.functional.interpolate(planar.permute(2, 0, 1)[None], size=(height, width), mode="area")[0].permute(1, 2, 0)
            return out[..., 0] if image.dim() == 2 else out

        rescaled.append(MultiViewFrame(frame.view_id, resample(frame.rgb_low), resample(frame.thermal), scaled, resample(frame.rgb_gt_bright)))
    return rescaled


def open_scene(source, seed=None, size=None):
    """
    Frames and initialization points from a scene directory or a generator spec.

    An empty source means the bundled example spec. For generated scenes a given seed replaces the
    spec's seed and a given (width, height) replaces its image size; loaded scenes are resampled.
    Returns (frames, points, point_colors, scene name).
    """
    source = source or EXAMPLE_SCENE
    if os.path.isdir(source):
        scene = load_scene(source)
        frames = rescale_frames(scene.frames, *size) if size else scene.frames
        return frames, scene.points, scene.point_colors, os.path.basename(os.path.normpath(source))

    spec = SyntheticSceneSpec.from_json(source)
    if seed is not None:
        spec.seed = seed
    if size:
        spec.width, spec.height = size
    generated = generate_scene(spec)
    name = f"{os.path.splitext(os.path.basename(source))[0]}-{spec.seed}"
    return generated.frames, generated.points, generated.point_colors, name
