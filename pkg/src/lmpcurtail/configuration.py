"""Run configuration for the lmpcurtail command line.

Values are resolved from, lowest precedence first: the process environment,
``~/.lmpcurtail``, the project ``.env`` (source checkouts only), a file given
with ``--config`` and finally the command line flags themselves.
"""

import argparse
import logging
import os
import re
import shlex
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

from dotenv import dotenv_values

from .constants import (
    COMMANDS,
    COMMON_OPTIONS,
    DEFAULT_ALLOWANCE,
    DEFAULT_BRUTE_FORCE_BUDGET,
    DEFAULT_ENDOWMENT,
    DEFAULT_EPSILON,
    DEFAULT_GRID_BUDGET,
    DEFAULT_RESOLUTION,
    DEFAULT_SEED,
    ENV_EXCLUDED_OPTIONS,
    ENV_PREFIX,
    KKT_TOL,
    OPTIONS,
    OUTPUT_FORMATS,
    REQUIRED_OPTIONS,
    USER_CONFIG,
    VERSION,
)
from .exceptions import ConfigError
from .types import CommandArgs, DefaultValues

__all__ = [
    "RunConfig",
    "make_defaults",
    "build_environment_values",
    "load_environment_settings",
    "setup_main_parser",
    "auto_discover",
    "validate_config",
    "load_run_config",
    "version_banner",
]

_INT_PATTERN = re.compile(r"^[+-]?\d+$")
_FLOAT_PATTERN = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

_OPTIONS_BY_DEST: Dict[str, Tuple[Tuple[str, ...], Dict[str, Any]]] = {kw["dest"]: (flags, kw) for flags, kw in OPTIONS}


class RunConfig(NamedTuple):
    """Fully resolved configuration of one command line run."""

    command: Optional[str]
    case: Optional[Path]
    bus: Optional[int]
    alpha: Optional[float]
    eps: float
    resolution: int
    lambda_lo: Optional[float]
    lambda_hi: Optional[float]
    scale_demand: Optional[float]
    seed: int
    sizes: Optional[List[int]]
    format: Optional[str]
    out: Optional[Path]
    outcome: Optional[Path]
    tolerance: float
    grid_budget: int
    brute_force_budget: int
    endowment: float
    allowance: float
    logging_level: int
    verbose: int
    config: Optional[str]
    version: bool = False


def make_defaults() -> DefaultValues:
    """Built-in values of every configurable option."""
    return {
        "case": None,
        "bus": None,
        "alpha": None,
        "eps": DEFAULT_EPSILON,
        "resolution": DEFAULT_RESOLUTION,
        "lambda_lo": None,
        "lambda_hi": None,
        "scale_demand": None,
        "seed": DEFAULT_SEED,
        "sizes": None,
        "format": None,
        "out": None,
        "outcome": None,
        "tolerance": KKT_TOL,
        "grid_budget": DEFAULT_GRID_BUDGET,
        "brute_force_budget": DEFAULT_BRUTE_FORCE_BUDGET,
        "endowment": DEFAULT_ENDOWMENT,
        "allowance": DEFAULT_ALLOWANCE,
        "logging_level": logging.ERROR,
        "verbose": 0,
        "config": None,
    }


def _echo(message: str, verbose: bool) -> None:
    if verbose:
        print(message, file=sys.stderr)


def build_environment_values(cli_file: Optional[Path] = None, verbose: bool = False) -> Dict[str, Optional[str]]:
    """Merges the environment with the dotenv configuration files.

    Later sources override earlier ones: OS environment, ``~/.lmpcurtail``,
    the project ``.env`` when ``_LMPCURTAIL_SOURCE`` is ``true``, and ``cli_file``.

    Args:
        cli_file (Optional[Path]): File passed with ``--config``.
        verbose (bool): Print which sources were loaded or skipped.

    Raises:
        ConfigError: If ``cli_file`` does not exist.

    Returns:
        Dict[str, Optional[str]]: The merged key/value pairs.
    """
    values: Dict[str, Optional[str]] = dict(os.environ)

    user_config = Path.home() / USER_CONFIG
    if user_config.is_file():
        _echo(f"Load user config file: {user_config}", verbose)
        values.update(dotenv_values(user_config))
    else:
        _echo(f"Skipping: {user_config} (not found)", verbose)

    if os.environ.get("_LMPCURTAIL_SOURCE", "").lower() == "true":
        project_env = Path(__file__).absolute().parents[2] / ".env"
        if project_env.is_file():
            _echo(f"Load project config file: {project_env}", verbose)
            values.update(dotenv_values(project_env))
        else:
            _echo(f"Skipping: {project_env} (not found)", verbose)

    if cli_file is not None:
        if not cli_file.is_file():
            raise ConfigError(f"configuration file not found: {str(cli_file)!r}")
        _echo(f"Load config file: {cli_file}", verbose)
        values.update(dotenv_values(cli_file))

    return values


def _converter(name: str) -> Callable[[str], Any]:
    if name == "logging_level":
        return _parse_logging_level
    if name in _OPTIONS_BY_DEST:
        kw = _OPTIONS_BY_DEST[name][1]
        convert = kw.get("type")
        if kw.get("nargs") == "+":
            item = convert or str
            return lambda raw: [item(part) for part in shlex.split(raw)]
        if convert is not None:
            return convert
    return _parse_scalar


def _parse_scalar(raw: str) -> Any:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if _INT_PATTERN.match(raw):
        return int(raw)
    if _FLOAT_PATTERN.match(raw):
        return float(raw)
    return raw


def _parse_logging_level(raw: str) -> int:
    if _INT_PATTERN.match(raw):
        return int(raw)
    level = logging.getLevelName(raw.upper())
    if not isinstance(level, int):
        raise ValueError(f"unknown logging level {raw!r}")
    return level


def load_environment_settings(
    defaults: DefaultValues, cli_file: Optional[Path] = None, verbose: bool = False
) -> DefaultValues:
    """Overrides ``defaults`` in place with ``LMPCURTAIL_*`` settings.

    Names are matched case-insensitively after the prefix. Values are typed with
    the converter of the matching command line option; unknown names are parsed
    as bool, int, float or string. Empty values are skipped.

    Raises:
        ConfigError: If a setting names an excluded option or cannot be parsed.

    Returns:
        DefaultValues: The updated ``defaults``.
    """
    for key, value in build_environment_values(cli_file, verbose).items():
        if not key.lower().startswith(ENV_PREFIX):
            continue
        config_name = key[len(ENV_PREFIX) :].lower()
        if not config_name:
            _echo(f"Skipping ENV[{key}]: empty setting name", verbose)
            continue
        if value is None or not value.strip():
            _echo(f"Skipping ENV[{key}]: empty value", verbose)
            continue
        value = value.strip()
        if config_name in ENV_EXCLUDED_OPTIONS:
            raise ConfigError(f"{key} cannot be set from the environment")

        try:
            parsed = _converter(config_name)(value)
        except ValueError as error:
            raise ConfigError(f"{key}: {error}") from error
        defaults[config_name] = parsed
        _echo(f"{config_name:<20} = {parsed!r} (ENV[{key}])", verbose)

    return defaults


def setup_main_parser(defaults: Optional[DefaultValues] = None) -> argparse.ArgumentParser:
    """Builds the top level parser with one subparser per command."""
    defaults = make_defaults() if defaults is None else defaults
    parser = argparse.ArgumentParser(
        prog="lmpcurtail",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="""Strategic curtailment analysis for LMP-based electricity markets.

EXAMPLES:
  lmpcurtail clear --case two_bus
  lmpcurtail staircase --case six_bus --bus 1 --out staircase.csv
  lmpcurtail curtail-tree --case six_bus --eps 0.5
  lmpcurtail grow --case six_bus --seed 3 --sizes 0 1 2
""",
    )
    parser.add_argument("--version", action="store_true", help="Show the lmpcurtail version and exit.")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, (help_text, extra) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        for dest in COMMON_OPTIONS + extra:
            flags, kw = _OPTIONS_BY_DEST[dest]
            sub.add_argument(*flags, **kw)
        sub.set_defaults(**defaults)

    return parser


def auto_discover(command_args: CommandArgs) -> Tuple[Optional[Path], int]:
    """Finds ``--config`` and the verbosity count before full parsing.

    Returns:
        Tuple[Optional[Path], int]: The config file (if any) and the number of ``-v`` flags.
    """
    cli_file: Optional[Path] = None
    verbose = 0
    for index, arg in enumerate(command_args):
        if arg == "--config" and index + 1 < len(command_args):
            cli_file = Path(command_args[index + 1])
        elif arg.startswith("--config="):
            cli_file = Path(arg.split("=", 1)[1])
        elif arg == "--verbose":
            verbose += 1
        elif re.fullmatch(r"-v+", arg):
            verbose += len(arg) - 1
    return cli_file, verbose


def validate_config(config: RunConfig) -> None:
    """Checks option values and the options each command requires.

    Raises:
        ConfigError: On the first invalid value.
    """
    if config.version:
        return
    if config.case is None:
        raise ConfigError("--case is required")
    for dest in REQUIRED_OPTIONS.get(config.command, ()):
        if getattr(config, dest) is None:
            raise ConfigError(f"{config.command} requires {_OPTIONS_BY_DEST[dest][0][0]}")

    checks = (
        (config.eps > 0, "--eps must be positive"),
        (config.resolution >= 2, "--resolution must be at least 2"),
        (
            config.lambda_lo is None or config.lambda_hi is None or config.lambda_lo <= config.lambda_hi,
            "--lambda-lo must not exceed --lambda-hi",
        ),
        (config.scale_demand is None or config.scale_demand > 0, "--scale-demand must be positive"),
        (config.grid_budget >= 1, "--grid-budget must be at least 1"),
        (config.brute_force_budget >= 1, "--brute-force-budget must be at least 1"),
        (config.tolerance > 0, "--tolerance must be positive"),
        (config.endowment > 0, "--endowment must be positive"),
        (0 < config.allowance <= 1, "--allowance must lie in (0, 1]"),
        (config.sizes is None or all(size >= 0 for size in config.sizes), "--sizes must be nonnegative"),
        (config.alpha is None or config.alpha >= 0, "--alpha must be nonnegative"),
        (config.format is None or config.format in OUTPUT_FORMATS, f"--format must be one of {OUTPUT_FORMATS}"),
    )
    for passed, message in checks:
        if not passed:
            raise ConfigError(message)


def load_run_config(argv: Optional[CommandArgs] = None) -> RunConfig:
    """Resolves and validates the configuration of one run.

    Args:
        argv (Optional[CommandArgs]): Arguments without the program name; defaults to ``sys.argv[1:]``.

    Returns:
        RunConfig: The validated configuration.
    """
    command_args = list(sys.argv[1:] if argv is None else argv)
    cli_file, verbose = auto_discover(command_args)

    defaults = load_environment_settings(make_defaults(), cli_file, verbose > 0)
    parser = setup_main_parser(defaults)
    namespace = parser.parse_args(command_args)
    if namespace.command is None and not namespace.version:
        parser.error("a command is required")

    values = {**defaults, **vars(namespace)}
    values["verbose"] = values.get("verbose") or 0
    if values["verbose"] >= 2:
        values["logging_level"] = logging.DEBUG
    elif values["verbose"] == 1:
        values["logging_level"] = min(values["logging_level"], logging.INFO)

    config = RunConfig(**{field: values.get(field) for field in RunConfig._fields})
    validate_config(config)
    return config


def version_banner() -> str:
    return f"lmpcurtail {VERSION}"
