import os
import glob
import importlib.util

from ...thermasplat import Logger, ValidationError


class CustomSchedulers:
    """
    Manages the loading and configuration of loss-weight schedules.

    Every .py file next to this one that defines a `settings` dict and a `get_weights` function is a
    schedule; dropping a new file here is how a different late-stage rule gets plugged in.

    Methods:
        load_schedulers(): Load schedule modules from the file system.
        load_scheduler_settings(): Extract the setting names of every schedule.
        get_default_scheduler_settings(): Extract default setting values of every schedule.
        get_weights(name, t, total, initial, final, **kwargs): Raw weight triple of a schedule at t.
    """

    logger = Logger()
    _instance = None

    def __init__(self):
        self.schedulers = self.load_schedulers()
        self.scheduler_settings = self.load_scheduler_settings()
        self.scheduler_defaults = self.get_default_scheduler_settings()

    @classmethod
    def shared(cls):
        """Schedules are loaded once per process."""
        if cls._instance is None:
            cls._instance = cls()
        return cls._instance

    def load_schedulers(self):
        schedulers = {}
        scheduler_files = sorted(glob.glob(os.path.dirname(__file__) + "/*.py"))
        for file_path in scheduler_files:
            module_name = os.path.basename(file_path)[:-3]
            if module_name not in ("__init__", "custom_schedulers"):
                spec = importlib.util.spec_from_file_location(module_name, file_path)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                if hasattr(module, "settings") and hasattr(module, "get_weights"):
                    schedulers[module.settings["name"]] = module
                else:
                    self.logger.log(f"{module_name} has no settings/get_weights, skipping", "WARNING")
        return schedulers

    def load_scheduler_settings(self):
        return {name: list(module.settings["settings"].keys()) for name, module in self.schedulers.items()}

    def get_default_scheduler_settings(self):
        defaults = {}
        for name, module in self.schedulers.items():
            defaults[name] = {setting: details[1] for setting, details in module.settings["settings"].items()}
        return defaults

    def get_scheduler_names(self):
        return sorted(self.schedulers)

    def get_weights(self, name, t, total, initial, final, **kwargs):
        if name not in self.schedulers:
            raise ValidationError(f"No schedule found with the name {name}, available: {self.get_scheduler_names()}")
        options = dict(self.scheduler_defaults[name])
        options.update({key: value for key, value in kwargs.items() if key in options})
        try:
            return self.schedulers[name].get_weights(t, total, initial, final, **options)
        except ValueError as e:
            raise ValidationError(str(e)) from e
