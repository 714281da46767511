"""
Versioned binary checkpoints.

Layout: b"DTGS" | version (u32 LE) | header length (u64 LE) | JSON header | float64 LE arrays.
The header lists every array by name and shape in the order they follow, together with the
counts, the config hash and everything non-numeric needed for an exact resume.
"""

import base64
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from ..thermasplat import Logger, ValidationError
from .cyclic_scheduler import SupervisionState
from .retinex_enhancer import EnhancerParams, RetinexEnhancer
from .scene_core import DTYPE, PARAMETER_CLASSES, GaussianModel

MAGIC = b"DTGS"
VERSION = 1
PREAMBLE = struct.Struct("<4sIQ")

logger = Logger()


@dataclass
class Checkpoint:
    iteration: int
    config_hash: str
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def gaussians(self):
        return GaussianModel(*[self.arrays[f"gaussians/{name}"] for name in PARAMETER_CLASSES])

    def enhancers(self, weights):
        params = []
        for view, exposure in enumerate(self.meta["exposures"]):
            params.append(EnhancerParams(self.arrays[f"enhancer/{view}/grid"], self.arrays[f"enhancer/{view}/gamma"], exposure))
        return RetinexEnhancer(params, weights)

    def supervision(self):
        states = []
        for view, (iteration, transition) in enumerate(self.meta["supervision"]):
            states.append(SupervisionState(self.arrays[f"supervision/{view}/gt"], iteration, transition))
        return states

    def restore_optimizer(self, optimizer):
        """Load moments and step counts into an optimizer built over the restored tensors."""
        for group in optimizer.param_groups:
            for i, p in enumerate(group["params"]):
                key = f"adam/{group['name']}/{i}"
                if key not in self.meta["adam_steps"]:
                    continue
                optimizer.state[p] = {
                    "step": self.meta["adam_steps"][key],
                    "first_moment": self.arrays[f"{key}/first_moment"].clone(),
                    "second_moment": self.arrays[f"{key}/second_moment"].clone(),
                }

    def restore_generator(self, generator):
        state = base64.b64decode(self.meta["rng_state"])
        generator.set_state(torch.frombuffer(bytearray(state), dtype=torch.uint8))


def capture(iteration, gaussians, enhancers, optimizer, supervision, generator, config_hash, meta=None):
    """Collect the full training state into a Checkpoint."""
    arrays = {f"gaussians/{name}": tensor for name, tensor in gaussians.named_tensors().items()}
    for view, params in enumerate(enhancers.params):
        arrays[f"enhancer/{view}/grid"] = params.grid
        arrays[f"enhancer/{view}/gamma"] = params.gamma_raw
    for view, state in enumerate(supervision):
        arrays[f"supervision/{view}/gt"] = state.gt_current

    steps = {}
    for group in optimizer.param_groups:
        for i, p in enumerate(group["params"]):
            state = optimizer.state.get(p)
            if not state:
                continue
            key = f"adam/{group['name']}/{i}"
            steps[key] = state["step"]
            arrays[f"{key}/first_moment"] = state["first_moment"]
            arrays[f"{key}/second_moment"] = state["second_moment"]

    header_meta = dict(meta or {})
    header_meta.update(
        {
            "exposures": [params.exposure for params in enhancers.params],
            "supervision": [[state.iteration, state.transition] for state in supervision],
            "adam_steps": steps,
            "rng_state": base64.b64encode(generator.get_state().numpy().tobytes()).decode("ascii"),
        }
    )
    return Checkpoint(iteration, config_hash, {k: v.detach().to(DTYPE) for k, v in arrays.items()}, header_meta)


def save_checkpoint(path, checkpoint):
    header = {
        "version": VERSION,
        "iteration": checkpoint.iteration,
        "config_hash": checkpoint.config_hash,
        "counts": {
            "gaussians": int(checkpoint.arrays["gaussians/position"].shape[0]),
            "views": len(checkpoint.meta.get("exposures", [])),
            "arrays": len(checkpoint.arrays),
        },
        "arrays": [{"name": name, "shape": list(tensor.shape)} for name, tensor in checkpoint.arrays.items()],
        "meta": checkpoint.meta,
    }
    encoded = json.dumps(header).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    partial = f"{path}.partial"
    with open(partial, "wb") as file:
        file.write(PREAMBLE.pack(MAGIC, VERSION, len(encoded)))
        file.write(encoded)
        for tensor in checkpoint.arrays.values():
            file.write(np.ascontiguousarray(tensor.cpu().numpy(), dtype="<f8").tobytes())
    os.replace(partial, path)
    logger.log(f"Saved checkpoint at iteration {checkpoint.iteration} to {path}", "INFORMATIONAL")
    return path


def load_checkpoint(path, expected_hash=None):
    if not os.path.isfile(path):
        raise ValidationError(f"Checkpoint not found at {path}")
    with open(path, "rb") as file:
        data = file.read()

    if len(data) < PREAMBLE.size:
        raise ValidationError(f"Checkpoint {path} is truncated ({len(data)} bytes)")
    magic, version, header_length = PREAMBLE.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise ValidationError(f"Unsupported checkpoint version in {path}: magic {magic!r}, version {version}, expected {MAGIC!r} v{VERSION}")

    start = PREAMBLE.size
    if len(data) < start + header_length:
        raise ValidationError(f"Checkpoint {path} is truncated inside its header")
    try:
        header = json.loads(data[start : start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"Checkpoint {path} has a malformed header: {e}") from e

    offset = start + header_length
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ValidationError(f"Checkpoint {path} is truncated in array '{entry['name']}'")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = torch.from_numpy(values.astype(np.float64))
        offset = end

    if expected_hash is not None and header["config_hash"] != expected_hash:
        logger.log(f"Checkpoint {path} was written with a different configuration ({header['config_hash'][:12]} vs {expected_hash[:12]})", "WARNING")

    return Checkpoint(header["iteration"], header["config_hash"], arrays, header["meta"])
