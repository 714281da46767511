"""
Module for handling configuration, logging, and shared utility functions for the thermasplat project.

Classes:
    ConfigReader: Handles reading and managing configuration settings.
    Logger: Logs messages with different severity levels and colors.
    Utility: Provides static methods for common operations.
    ValidationError / NumericalFailure: The two failure families every command maps to an exit code.
"""

import os
import json
import hashlib
import torch


class ValidationError(ValueError):
    """Invalid configuration, arguments or files. Exit code 1."""

    exit_code = 1


class DegenerateRotationError(ValidationError):
    pass


class NumericalFailure(ArithmeticError):
    """A non-finite value reached a place where it must not. Exit code 2."""

    exit_code = 2


class ConfigReader:
    """
    Handles reading and managing configuration settings from a flat JSON file.
    """

    ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
    DEFAULT_PATH = os.path.join(ROOT_DIR, "settings", "default_config.json")

    path = None
    settings = None

    @classmethod
    def print_thermasplat(cls, message, color="\033[0;35m"):
        """Print a message with a specific color prefix."""
        print(f"{color}[thermasplat] \033[0m{message}")

    @classmethod
    def use_file(cls, path=None):
        """Point the reader at a config file, the bundled default when path is None."""
        cls.path = os.path.abspath(path) if path else cls.DEFAULT_PATH
        cls.settings = None

    @classmethod
    def load(cls):
        """Read the current config file once and cache it."""
        if cls.settings is not None:
            return cls.settings

        if cls.path is None:
            cls.use_file()

        try:
            with open(cls.path, "r", encoding="utf-8") as file:
                data = json.load(file)
        except FileNotFoundError as e:
            raise ValidationError(f"Configuration file not found at {cls.path}.") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"Error decoding JSON from {cls.path}: {e}") from e

        if not isinstance(data, dict):
            raise ValidationError(f"Configuration file {cls.path} must hold a flat JSON object.")
        cls.settings = data
        return cls.settings

    @staticmethod
    def get_setting(setting_id, default=None):
        """Retrieve a setting value from the configuration file."""
        try:
            settings = ConfigReader.load()
        except ValidationError as e:
            ConfigReader.print_thermasplat(str(e), "\033[0;33m")
            return default
        return settings.get(setting_id, default)


class Logger:
    """
    Logger class for printing messages with different severity levels and colors.

    Logger levels:
        - EMERGENCY
        - ALERT
        - CRITICAL
        - ERROR
        - WARNING
        - INFORMATIONAL
        - DEBUG
    """

    PURPLE_TEXT = "\033[0;35m"
    RED_TEXT = "\033[0;31m"
    YELLOW_TEXT = "\033[0;33m"
    GREEN_TEXT = "\033[0;32m"
    RESET_TEXT = "\033[0m"
    PREFIX = "[thermasplat] "

    DEFAULT_LEVELS = ["INFORMATIONAL", "WARNING"]
    enabled_levels = None

    @classmethod
    def reload_config(cls):
        """Reload the logger configuration settings."""
        cls.enabled_levels = ConfigReader.get_setting("thermasplat.LoggingLevel", cls.DEFAULT_LEVELS)

    @classmethod
    def print_thermasplat(cls, message, color):
        """Print a message with a specific color prefix."""
        print(f"{color}{cls.PREFIX}{cls.RESET_TEXT}{message}")

    def is_enabled(self, level):
        if self.enabled_levels is None:
            self.reload_config()
        return level.upper() in self.enabled_levels or level.upper() in ["EMERGENCY", "ALERT", "CRITICAL", "ERROR"]

    def log(self, message, level="ERROR"):
        """Log a message with a specified severity level."""
        # Determine the color based on the type of message
        if level.upper() in ["EMERGENCY", "ALERT", "CRITICAL", "ERROR"]:
            color = self.RED_TEXT
        elif level.upper() == "WARNING":
            color = self.YELLOW_TEXT
        elif level.upper() == "DEBUG":
            color = self.GREEN_TEXT
        else:
            color = self.PURPLE_TEXT  # Default color

        if self.is_enabled(level):
            self.print_thermasplat(message, color)

    def print_schedule_table(self, name, rows, force=False):
        """
        Print a schedule as an aligned table, one row per sampled iteration.

        Args:
        name (str): Schedule name for the header.
        rows (list): Tuples of (t, alpha, (lambda_enh, lambda_gs, lambda_therm), lr).
        force (bool): Print even when DEBUG is not enabled.
        """
        if not force and not self.is_enabled("DEBUG"):
            return

        self.print_thermasplat(f"Schedule: {name}", self.PURPLE_TEXT)
        print("Iter    | Alpha  | l_enh  | l_gs   | l_therm | LR")
        print("-" * 65)
        for t, alpha, weights, lr in rows:
            print(f"{t:<7} | {alpha:<6.4f} | {weights[0]:<6.4f} | {weights[1]:<6.4f} | {weights[2]:<7.4f} | {lr:.3e}")


class Utility:
    """
    Utility class providing various static methods for common operations.
    """

    logger = Logger()
    ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
    DTYPE = torch.float64

    @staticmethod
    def check_image_dimensions(tensors, names):
        """Check if the spatial dimensions of the provided image tensors match."""
        reference_dimensions = tensors[0].shape[:2]  # (H, W), channels may differ
        mismatched_images = [names[i] for i, tensor in enumerate(tensors) if tensor.shape[:2] != reference_dimensions]

        if mismatched_images:
            raise ValidationError(f"Input image dimensions do not match for images: {mismatched_images}")

    @staticmethod
    def check_finite(tensor, what):
        """Raise NumericalFailure naming the first offending row of a tensor."""
        finite = torch.isfinite(tensor)
        if finite.all():
            return
        rows = tensor.shape[0] if tensor.dim() else 1
        bad = (~finite).reshape(rows, -1).any(dim=1).nonzero()
        index = int(bad[0]) if len(bad) else 0
        raise NumericalFailure(f"Non-finite {what} at index {index}")

    @staticmethod
    def loss_and_grad(loss_fn, *inputs):
        """Evaluate a scalar loss and its gradients with respect to every input tensor."""
        leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
        with torch.enable_grad():
            loss = loss_fn(*leaves)
            grads = torch.autograd.grad(loss, leaves, allow_unused=True)
        grads = tuple(torch.zeros_like(x) if g is None else g for x, g in zip(leaves, grads))
        return loss.detach(), grads

    @staticmethod
    def luminance(image):
        """Per-pixel luma of an (H, W, 3) image."""
        weights = image.new_tensor([0.299, 0.587, 0.114])
        return (image * weights).sum(dim=-1)

    @staticmethod
    def config_hash(settings):
        """SHA-256 over the canonical JSON form of a settings dict."""
        canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def create_setting_entry(cls, setting_type, setting_value):
        """Create argparse keyword arguments from a settings tuple [type, default, min, max, step, round]."""
        if setting_type == "INT":
            return {"type": int, "default": None, "metavar": f"INT[{setting_value[2]}..{setting_value[3]}]"}
        if setting_type == "FLOAT":
            return {"type": float, "default": None, "metavar": f"FLOAT[{setting_value[2]}..{setting_value[3]}]"}
        if setting_type == "FLOATS":
            return {"type": float, "nargs": len(setting_value[1]), "default": None, "metavar": "FLOAT"}
        if setting_type == "STRING":
            choices = setting_value[2] if len(setting_value) > 2 else None
            return {"type": str, "default": None, "choices": choices or None}
        if setting_type == "BOOLEAN":
            return {"action": "store_const", "const": True, "default": None}
        raise ValidationError(f"Unsupported setting type: {setting_type}")

    @classmethod
    def check_setting_value(cls, name, setting_value, value):
        """Validate a value against its settings tuple and return it coerced to the declared type."""
        setting_type = setting_value[0]
        if setting_type == "BOOLEAN":
            return bool(value)
        if setting_type == "STRING":
            choices = setting_value[2] if len(setting_value) > 2 else None
            if choices and value not in choices:
                raise ValidationError(f"{name} must be one of {choices}, got {value!r}")
            return str(value)
        if setting_type == "FLOATS":
            if len(value) != len(setting_value[1]):
                raise ValidationError(f"{name} must hold {len(setting_value[1])} numbers, got {value!r}")
            return tuple(float(v) for v in value)

        cast = int if setting_type == "INT" else float
        try:
            value = cast(value)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{name} must be {setting_type}, got {value!r}") from e
        if not setting_value[2] <= value <= setting_value[3]:
            raise ValidationError(f"{name}={value} outside [{setting_value[2]}, {setting_value[3]}]")
        return value
