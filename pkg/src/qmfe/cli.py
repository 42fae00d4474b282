"""``qmfe`` command line: thin argparse layer over :mod:`qmfe.harness`.

Settings are merged in increasing priority: built-in defaults, the
``QMFE_SEED`` environment variable (seed only), ``--config`` file, flags.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import re
import sys

from . import harness
from .errors import QmfeError, ValidationError
from .measurements import MEASUREMENTS, NOISE_KINDS
from .protocols import PROTOCOLS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("qmfe")

_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_ANGLE = re.compile(rf"^\s*([-+]?)\s*(?:({_NUM})\s*\*?\s*)?pi\s*(?:/\s*({_NUM}))?\s*$")


def parse_angle(text: str) -> float:
    """Radians, either a plain number or a multiple of pi such as ``pi/3`` or ``0.25*pi``."""
    try:
        return float(text)
    except ValueError:
        pass
    match = _ANGLE.match(text)
    if not match:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}")
    sign, coef, den = match.groups()
    if den is not None and float(den) == 0:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}")
    value = (float(coef) if coef else 1.0) * math.pi / (float(den) if den else 1.0)
    return -value if sign == "-" else value


def _list_of(item):
    def parse(text: str) -> list:
        parts = [p for p in text.split(",") if p.strip()]
        if not parts:
            raise argparse.ArgumentTypeError("empty list")
        try:
            return [item(p.strip()) for p in parts]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {exc}") from None

    return parse


def _seed(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}") from None


# flag dest -> config field
_FLAG_FIELDS = {
    "measurement": "measurement",
    "theta": "theta",
    "protocol": "protocol",
    "epsilon": "epsilon",
    "delta": "delta",
    "repeats": "repeats",
    "seed": "master_seed",
    "out": "out",
    "format": "format",
    "workers": "workers",
    "shot_mode": "shot_mode",
    "p_grid": "p_grid",
    "m_grid": "m_grid",
    "theta_grid": "theta_grid",
    "theta_count": "theta_count",
    "bin_width": "bin_width",
}


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--measurement", choices=MEASUREMENTS)
    g.add_argument("--theta", type=parse_angle, help="EJM angle in radians (accepts e.g. pi/3)")
    g.add_argument("--noise", choices=NOISE_KINDS, help="noise model of the simulated device")
    g.add_argument("--p", type=float, help="noise rate")
    g.add_argument("--protocol", choices=PROTOCOLS)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--repeats", type=int, help="runs per configuration (default depends on the command)")
    g.add_argument("--seed", type=_seed, help="master seed (falls back to $QMFE_SEED, then 0)")
    g.add_argument("--out", help="output file; CSV output also writes sidecar files next to it")
    g.add_argument("--format", choices=harness.FORMATS)
    g.add_argument("--workers", type=int, help="worker processes")
    g.add_argument("--shot-mode", dest="shot_mode", choices=harness.SHOT_MODES)
    g.add_argument("--timing", action="store_true", default=None, help="add a wall_time column (not reproducible)")
    g.add_argument("--p-grid", dest="p_grid", type=_list_of(float), help="comma-separated noise rates")
    g.add_argument("--m-grid", dest="m_grid", type=_list_of(int), help="comma-separated Pauli draw counts")
    g.add_argument("--theta-grid", dest="theta_grid", type=_list_of(parse_angle), help="comma-separated angles")
    g.add_argument("--theta-count", dest="theta_count", type=int)
    g.add_argument("--bin-width", dest="bin_width", type=float)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


_HELP = {
    "estimate": "repeated runs of one protocol",
    "sweep-noise": "estimates across depolarizing rates",
    "histogram": "distribution of repeated estimates",
    "convergence": "efficient vs direct protocol as the draw count grows",
    "bounds": "sample-complexity bounds against planned call counts",
    "sample-histogram": "call counts over uniformly drawn EJM angles",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmfe", description="Seeded measurement-fidelity estimation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    common = _common_parser()
    for name in harness.COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name], description=_HELP[name])
    return parser


def config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    data: dict = {}
    env_seed = harness.seed_from_env()
    if env_seed is not None:
        data["master_seed"] = env_seed
    if args.config:
        data.update(harness.read_config_dict(args.config))
    for dest, name in _FLAG_FIELDS.items():
        value = getattr(args, dest)
        if value is not None:
            data[name] = value
    if args.timing:
        data["timing"] = True
    if args.noise is not None or args.p is not None:
        noise = dict(data.get("noise") or {"kind": "none", "p": 0.0})
        if args.noise is not None:
            noise["kind"] = args.noise
        if args.p is not None:
            noise["p"] = args.p
            # A rate without a model only makes sense as depolarizing noise.
            if args.noise is None and noise["kind"] == "none" and args.p > 0:
                noise["kind"] = "depolarizing"
        data["noise"] = noise
    if isinstance(data.get("noise"), harness.NoiseSpec):
        data["noise"] = dataclasses.asdict(data["noise"])
    return harness.ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValidationError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = harness.run_command(args.command, cfg)
        written = harness.write_result(result)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QmfeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
