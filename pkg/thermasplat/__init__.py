from .thermasplat import Logger
from .src.custom_schedulers.custom_schedulers import CustomSchedulers
from .src.schedule_preview import generate_schedule_command_class

from .src.gen_data import GenDataCommand
from .src.train import TrainCommand
from .src.render_views import RenderCommand
from .src.evaluate import EvalCommand
from .src.check_gradients import GradcheckCommand
from .src.ablate import AblateCommand

COMMAND_CLASS_MAPPINGS = {
    "gen-data": GenDataCommand,
    "train": TrainCommand,
    "render": RenderCommand,
    "eval": EvalCommand,
    "gradcheck": GradcheckCommand,
    "ablate": AblateCommand,
}

COMMAND_DISPLAY_NAME_MAPPINGS = {
    "gen-data": "Generate a synthetic RGB + thermal scene",
    "train": "Train Gaussians and enhancers jointly",
    "render": "Render poses from a checkpoint",
    "eval": "Score a checkpoint with PSNR / SSIM",
    "gradcheck": "Check analytic gradients against finite differences",
    "ablate": "Run the ablation variants and tabulate them",
}

logger = Logger()


def register_schedule_commands():
    """
    Register a `schedule-<name>` preview command for every schedule found in
    'src/custom_schedulers'.
    """
    schedulers = CustomSchedulers.shared()
    for name, module in schedulers.schedulers.items():
        command_name = f"schedule-{name.replace('_', '-')}"
        COMMAND_CLASS_MAPPINGS[command_name] = generate_schedule_command_class(name, module.settings)
        COMMAND_DISPLAY_NAME_MAPPINGS[command_name] = f"Print the {name} loss-weight schedule"
        logger.log(f"Registered schedule preview: {command_name}", "DEBUG")


register_schedule_commands()
