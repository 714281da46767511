"""
Command-line entry point: one subcommand per registered command class.

Every argument is generated from the command's INPUT_TYPES settings tuples. Exit codes: 0 on
success, 1 on a ValidationError, 2 on a NumericalFailure.
"""

import argparse
import sys

from . import COMMAND_CLASS_MAPPINGS, COMMAND_DISPLAY_NAME_MAPPINGS
from .thermasplat import ConfigReader, Logger, NumericalFailure, Utility, ValidationError


def build_parser():
    parser = argparse.ArgumentParser(prog="thermasplat", description="Thermal-guided low-light Gaussian splatting")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMAND_CLASS_MAPPINGS.items():
        sub = subparsers.add_parser(name, help=COMMAND_DISPLAY_NAME_MAPPINGS.get(name, name))
        sub.add_argument("--config", dest="config_path", default=None, help="flat JSON settings file")
        for section, entries in command.INPUT_TYPES().items():
            for setting, entry in entries.items():
                kwargs = Utility.create_setting_entry(entry[0], entry)
                if section == "required":
                    kwargs["required"] = True
                elif entry[0] != "BOOLEAN":
                    kwargs["help"] = f"default: {entry[1]}"
                sub.add_argument(f"--{setting.replace('_', '-')}", dest=setting, **kwargs)
    return parser


def main(argv=None):
    args = vars(build_parser().parse_args(argv))
    command_name = args.pop("command")
    command = COMMAND_CLASS_MAPPINGS[command_name]
    ConfigReader.use_file(args.get("config_path"))
    Logger.reload_config()
    logger = Logger()

    try:
        getattr(command(), command.FUNCTION)(**args)
    except ValidationError as e:
        logger.log(f"{command_name}: {e}", "ERROR")
        return e.exit_code
    except NumericalFailure as e:
        logger.log(f"{command_name}: {e}", "ERROR")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
