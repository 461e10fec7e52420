"""Entry point of the lmpcurtail command line."""

import json
import logging
import sys
import traceback
from dataclasses import replace
from typing import Callable, Dict, Optional, Tuple

from .analysis import brute_force_curtailment, curtailment_profit, growth_experiment, verify_power_profit_link
from .cases import resolve_case
from .configuration import RunConfig, load_run_config, version_banner
from .constants import CSV_COMMANDS
from .exceptions import (
    CaseFormatError,
    ClearingInfeasibleError,
    ConfigError,
    LmpCurtailError,
    NetworkValidationError,
)
from .market import MarketOutcome, check_kkt, clear_market
from .model import Network, default_lambda_bounds, load_case, scale_demand, validate_network
from .reporter import Artifact, write_artifact
from .singlebus import optimize_single_bus, trace_staircase
from .treedp import dp_solve
from .types import CommandArgs

logger = logging.getLogger(__name__)

Handler = Callable[[Network, RunConfig], Tuple[Artifact, int]]


def load_network(config: RunConfig) -> Network:
    """Loads, validates and demand-scales the case named by ``config``.

    Raises:
        NetworkValidationError: If the case breaks a network invariant.
    """
    net = load_case(resolve_case(config.case))
    violations = validate_network(net)
    if violations:
        raise NetworkValidationError(violations)
    factor = net.demand_scale if config.scale_demand is None else config.scale_demand
    return scale_demand(replace(net, demand_scale=1.0), factor)


def _lambda_bounds(net: Network, config: RunConfig) -> Tuple[float, float]:
    low, high = default_lambda_bounds(net, config.lambda_lo, config.lambda_hi)
    if low > high:
        raise ConfigError(f"LMP bounds are inverted: [{low}, {high}]")
    return low, high


def _header(net: Network, command: str) -> Dict[str, object]:
    return {
        "command": command,
        "case": net.name,
        "demand_scale": net.applied_demand_scale,
        "bus_ids": list(net.bus_ids),
    }


def _run_clear(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    if config.alpha is not None and config.bus is None:
        raise ConfigError("--alpha needs --bus")
    alpha = net.curtailment({config.bus: config.alpha}) if config.alpha is not None else None
    outcome = clear_market(net, alpha)
    record = {**_header(net, "clear"), **outcome.to_dict()}
    return Artifact("clear", record), 0


def _run_staircase(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    profile = trace_staircase(net, config.bus, config.alpha)
    record = {**_header(net, "staircase"), **profile.to_dict()}
    return Artifact("staircase", record, table=profile.to_frame()), 0


def _run_curtail_single(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    result = optimize_single_bus(net, config.bus, _lambda_bounds(net, config))
    record = {**_header(net, "curtail-single"), **result.to_dict()}
    return Artifact("curtail-single", record), 0


def _run_curtail_tree(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    bounds = _lambda_bounds(net, config)
    solution = dp_solve(net, config.eps, bounds, config.grid_budget)
    record = {**_header(net, "curtail-tree"), **solution.to_dict()}
    try:
        record["exact_profit"] = curtailment_profit(net, solution.curtailment, bounds).total
    except ClearingInfeasibleError as error:
        logger.warning("DP curtailment does not clear exactly: %s", error)
        record["exact_profit"] = None
    return Artifact("curtail-tree", record), 0


def _run_brute_force(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    result = brute_force_curtailment(net, config.resolution, config.brute_force_budget, _lambda_bounds(net, config))
    record = {**_header(net, "brute-force"), **result.to_dict()}
    return Artifact("brute-force", record), 0


def _run_market_power(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    report = verify_power_profit_link(net, config.bus, config.alpha, _lambda_bounds(net, config))
    record = {**_header(net, "market-power"), **report.to_dict()}
    return Artifact("market-power", record), 0


def _run_grow(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    experiment = growth_experiment(
        net,
        seed=config.seed,
        sizes=config.sizes,
        endowment=config.endowment,
        allowance=config.allowance,
        budget=config.brute_force_budget,
        lambda_bounds=_lambda_bounds(net, config),
    )
    record = {**_header(net, "grow"), **experiment.to_dict()}
    return Artifact("grow", record, table=experiment.to_frame(), sidecar=experiment.sidecar()), 0


def read_outcome(net: Network, config: RunConfig) -> MarketOutcome:
    """Reads the ``--outcome`` file and checks its vector lengths against ``net``.

    Raises:
        CaseFormatError: If the file is unreadable or does not describe an outcome of ``net``.
    """
    try:
        outcome = MarketOutcome.from_dict(json.loads(config.outcome.read_text(encoding="utf-8")))
    except FileNotFoundError as error:
        raise CaseFormatError(f"outcome file not found: {str(config.outcome)!r}") from error
    except OSError as error:
        reason = error.strerror or error
        raise CaseFormatError(f"outcome file {str(config.outcome)!r} cannot be read: {reason}") from error
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as error:
        raise CaseFormatError(f"malformed outcome file {str(config.outcome)!r}: {error}") from error

    expected = {
        "alpha": net.n,
        "redispatch": net.n,
        "lmps": net.n,
        "duals_gen_lo": net.n,
        "duals_gen_hi": net.n,
        "flows": net.t,
        "duals_flow_lo": net.t,
        "duals_flow_hi": net.t,
    }
    for name, size in expected.items():
        if getattr(outcome, name).shape != (size,):
            raise CaseFormatError(f"outcome field {name!r} must have {size} entries")
    return outcome


def _run_check_kkt(net: Network, config: RunConfig) -> Tuple[Artifact, int]:
    report = check_kkt(net, None, read_outcome(net, config), config.tolerance)
    record = {**_header(net, "check-kkt"), **report.to_dict(), "max_residual": report.max_residual}
    if not report.passed:
        logger.error("KKT check failed: largest residual %.3g > %.3g", report.max_residual, report.tolerance)
    return Artifact("check-kkt", record), 0 if report.passed else 3


HANDLERS: Dict[str, Handler] = {
    "clear": _run_clear,
    "staircase": _run_staircase,
    "curtail-single": _run_curtail_single,
    "curtail-tree": _run_curtail_tree,
    "brute-force": _run_brute_force,
    "market-power": _run_market_power,
    "grow": _run_grow,
    "check-kkt": _run_check_kkt,
}


def run_lmpcurtail(config: RunConfig) -> int:
    """Runs one validated configuration and writes its artifact.

    Returns:
        int: The process exit status.
    """
    logging.basicConfig(
        level=config.logging_level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if config.version:
        print(version_banner())
        return 0

    net = load_network(config)
    if config.bus is not None and config.bus not in net.bus_ids:
        raise ConfigError(f"bus {config.bus} is not in case {net.name!r}")
    logger.info("Running %s on %r (%d buses, %d lines)", config.command, net.name, net.n, net.t)
    artifact, status = HANDLERS[config.command](net, config)
    fmt = config.format or ("csv" if config.command in CSV_COMMANDS else "json")
    write_artifact(artifact, fmt, config.out)
    return status


def main(argv: Optional[CommandArgs] = None) -> int:
    try:
        return run_lmpcurtail(load_run_config(argv))
    except LmpCurtailError as error:
        print(f"{error.__class__.__name__}: {error}", file=sys.stderr)
        return error.exit_code
    except Exception:  # pylint: disable=broad-exception-caught
        traceback.print_exc()
    return 1


if __name__ == "__main__":
    sys.exit(main())
