"""
Run configuration: the settings schema, file/flag merging and the validated RunConfig.
"""

from dataclasses import dataclass, fields

from ..thermasplat import ConfigReader, Logger, Utility, ValidationError
from .cyclic_scheduler import GS_LOSS_WEIGHTS, ScheduleConfig, normalize_weights
from .optimizer import LR_MULTIPLIERS

# Format: "setting": [type, default, min, max, step, round_flag]; STRING entries carry their choices at index 2.
RUN_SETTINGS = {
    "scene": ["STRING", ""],
    "out": ["STRING", "runs/default"],
    "resolution": ["STRING", ""],
    "seed": ["INT", 0, 0, 2147483647, 1, False],
    "iters": ["INT", 2000, 1, 10000000, 1, False],
    "transition": ["INT", 1000, 1, 10000000, 1, False],
    "schedule": ["STRING", "four_stage"],
    "lambda_initial": ["FLOATS", [0.1, 0.9, 0.2]],
    "lambda_final": ["FLOATS", [0.1, 0.9, 0.2]],
    "breakpoints": ["FLOATS", [0.2, 0.4, 0.7]],
    "thermal_gamma": ["FLOAT", 0.1, 0.0, 1.0, 0.01, False],
    "gs_weights": ["FLOATS", list(GS_LOSS_WEIGHTS)],
    "enh_weights": ["FLOATS", [1.0, 0.1, 0.5]],
    "exposure": ["FLOAT", 0.45, 0.01, 0.99, 0.01, False],
    "enhancer_gamma": ["FLOAT", 2.2, 0.1, 10.0, 0.1, False],
    "grid_rows": ["INT", 12, 1, 256, 1, False],
    "grid_cols": ["INT", 16, 1, 256, 1, False],
    "lr": ["FLOAT", 1e-3, 1e-8, 1.0, 1e-4, False],
    "lr_mode": ["STRING", "warm_restart", ["warm_restart", "single"]],
    "lr_period": ["INT", 5000, 1, 10000000, 1, False],
    "lr_multipliers": ["FLOATS", list(LR_MULTIPLIERS.values())],
    "background": ["FLOATS", [0.0, 0.0, 0.0]],
    "view_sampling": ["STRING", "round_robin", ["round_robin", "random"]],
    "holdout_every": ["INT", 8, 2, 100000, 1, False],
    "prune_every": ["INT", 1000, 0, 10000000, 100, False],
    "prune_threshold": ["FLOAT", 0.005, 0.0, 1.0, 0.001, False],
    "checkpoint_every": ["INT", 500, 0, 10000000, 100, False],
    "k_neighbors": ["INT", 3, 1, 64, 1, False],
    "init_points": ["INT", 1000, 4, 1000000, 100, False],
    "preprocess_iters": ["INT", 200, 1, 100000, 10, False],
    "disable_cyclic": ["BOOLEAN", False],
    "disable_thermal": ["BOOLEAN", False],
    "disable_enhancer": ["BOOLEAN", False],
    "preprocess_retinex": ["BOOLEAN", False],
}

# Paths and output locations do not change what a run computes.
UNHASHED_SETTINGS = ("out", "scene")


def parse_resolution(text):
    """(width, height) from a WxH string such as 160x120, None for an empty string."""
    if not text:
        return None
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError as e:
        raise ValidationError(f"Resolution must look like 160x120, got {text!r}") from e
    if width <= 0 or height <= 0:
        raise ValidationError(f"Resolution must be positive, got {text!r}")
    return width, height


@dataclass
class RunConfig:
    scene: str
    out: str
    resolution: str
    seed: int
    iters: int
    transition: int
    schedule: str
    lambda_initial: tuple
    lambda_final: tuple
    breakpoints: tuple
    thermal_gamma: float
    gs_weights: tuple
    enh_weights: tuple
    exposure: float
    enhancer_gamma: float
    grid_rows: int
    grid_cols: int
    lr: float
    lr_mode: str
    lr_period: int
    lr_multipliers: tuple
    background: tuple
    view_sampling: str
    holdout_every: int
    prune_every: int
    prune_threshold: float
    checkpoint_every: int
    k_neighbors: int
    init_points: int
    preprocess_iters: int
    disable_cyclic: bool
    disable_thermal: bool
    disable_enhancer: bool
    preprocess_retinex: bool

    @classmethod
    def defaults(cls):
        return {name: entry[1] for name, entry in RUN_SETTINGS.items()}

    @classmethod
    def from_settings(cls, settings):
        """Validate every value against the schema, then the weight-triple invariants."""
        unknown = sorted(set(settings) - set(RUN_SETTINGS))
        if unknown:
            Logger().log(f"Ignoring unknown settings: {unknown}", "WARNING")
        values = {}
        for name, entry in RUN_SETTINGS.items():
            values[name] = Utility.check_setting_value(name, entry, settings.get(name, entry[1]))
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def resolve(cls, config_path=None, overrides=None):
        """Schema defaults, then the config file, then explicit overrides (flags that were given)."""
        ConfigReader.use_file(config_path)
        Logger.reload_config()
        merged = cls.defaults()
        file_settings = ConfigReader.load()
        merged.update({key: value for key, value in file_settings.items() if not key.startswith("thermasplat.")})
        merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
        return cls.from_settings(merged)

    def validate(self):
        for name in ("lambda_initial", "lambda_final"):
            normalize_weights(getattr(self, name)).validate()
        self.schedule_config()
        if min(self.gs_weights) < 0 or min(self.enh_weights) < 0:
            raise ValidationError("Loss-term weights must be non-negative")
        if min(self.lr_multipliers) <= 0:
            raise ValidationError("Learning-rate multipliers must be positive")
        if self.resolution:
            self.image_size()
        return self

    def schedule_config(self):
        return ScheduleConfig(self.lambda_initial, self.lambda_final, self.iters, self.breakpoints, self.schedule)

    def multipliers(self):
        return dict(zip(LR_MULTIPLIERS, self.lr_multipliers))

    def image_size(self):
        return parse_resolution(self.resolution)

    def to_settings(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    def config_hash(self):
        settings = {key: value for key, value in self.to_settings().items() if key not in UNHASHED_SETTINGS}
        return Utility.config_hash(settings)

    def with_overrides(self, **overrides):
        settings = self.to_settings()
        settings.update(overrides)
        return RunConfig.from_settings(settings)

    def summary(self):
        flags = [name for name in ("disable_cyclic", "disable_thermal", "disable_enhancer", "preprocess_retinex") if getattr(self, name)]
        return (
            f"iters={self.iters} transition={self.transition} schedule={self.schedule} lr={self.lr} ({self.lr_mode}) "
            f"seed={self.seed} flags={flags or 'none'}"
        )
