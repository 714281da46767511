from ..thermasplat import Logger
from .custom_schedulers.custom_schedulers import CustomSchedulers
from .cyclic_scheduler import alpha_blend, normalize_weights
from .optimizer import DEFAULT_LR, DEFAULT_PERIOD, cosine_lr
from .run_config import RUN_SETTINGS


def generate_schedule_command_class(name, settings):
    """Generates a command that prints one loss-weight schedule next to alpha and the learning rate."""

    class DynamicScheduleCommand:
        logger = Logger()

        @classmethod
        def INPUT_TYPES(cls):
            return {
                "required": {},
                "optional": {
                    **{key: RUN_SETTINGS[key] for key in ("iters", "transition", "lambda_initial", "lambda_final")},
                    "lr": ["FLOAT", DEFAULT_LR, 1e-8, 1.0, 1e-4, False],
                    "lr_period": ["INT", DEFAULT_PERIOD, 1, 10000000, 1, False],
                    "samples": ["INT", 11, 2, 1000, 1, False],
                    **settings["settings"],
                },
            }

        RETURN_TYPES = ("TABLE",)
        FUNCTION = "preview"
        CATEGORY = "thermasplat/schedules"

        def preview(self, config_path=None, **kwargs):
            options = {key: entry[1] for key, entry in self.INPUT_TYPES()["optional"].items()}
            options.update({key: value for key, value in kwargs.items() if value is not None})
            iters, samples = options.pop("iters"), options.pop("samples")
            transition, lr, period = options.pop("transition"), options.pop("lr"), options.pop("lr_period")
            initial = normalize_weights(options.pop("lambda_initial")).as_tuple()
            final = normalize_weights(options.pop("lambda_final")).as_tuple()

            rows = []
            for k in range(samples):
                t = round(k * iters / (samples - 1))
                raw = CustomSchedulers.shared().get_weights(name, t, iters, initial, final, **options)
                rows.append((t, alpha_blend(t, transition), normalize_weights(raw).as_tuple(), cosine_lr(t, lr, period)))
            self.logger.print_schedule_table(name, rows, force=True)
            return (rows,)

    return DynamicScheduleCommand
