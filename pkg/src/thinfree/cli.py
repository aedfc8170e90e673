"""Command-line front end.

    thinfree example twoballs --out runs/tb
    thinfree solve --poly "x1^2+x2^2-1" --mode compact --L 4 --h 0.0625
    thinfree approx --points target.csv --eps 0.2
    thinfree subsets --poly "x1^2+x2^2-0.5" --delta 0.1
    thinfree verify --seed 0

Settings come from flags, then from a ``--config`` file of ``key = value``
lines, then from the grid pinned for the pipeline.  Exit status is 0 when
every check passes, 2 when a check fails or the pipeline gives up (the report
is still written), and 1 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import enum
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import io as tio
from .pipelines import (
    APPROX_GRID,
    NAMED_EXAMPLES,
    NAMED_GRID,
    POSITIVITY_GRID,
    ClassPreconditionError,
    PipelineError,
    PipelineReport,
    run_bounded_positivity,
    run_compact_contact,
    run_named_example,
    run_prop_subsets,
    run_property_suite,
    run_thm_approx,
    zero_level_raster,
)
from .polyalg import PolynomialSyntaxError, parse_poly
from .solver import build_domain

__all__ = ["RunConfig", "ConfigError", "RasterStyle", "render_raster", "read_config_file", "dispatch", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2

COMMANDS = ("example", "solve", "approx", "subsets", "verify")


class ConfigError(ValueError):
    """Bad flag, config file entry or value."""


class RasterStyle(enum.Enum):
    CONTACT = "contact"
    POSITIVITY = "positivity"
    OVERLAY = "overlay"


def render_raster(s, style, path, overlay_poly=None):
    """Write a thin set as a plain PGM; ``OVERLAY`` also draws the zero level of ``overlay_poly`` in grey."""
    style = RasterStyle(style)
    if s.domain.size == 0:
        raise ValueError("empty domain")
    overlay = None
    if style is RasterStyle.OVERLAY:
        if overlay_poly is None:
            raise ValueError("overlay style needs a polynomial")
        overlay = zero_level_raster(overlay_poly.evaluate(*s.domain.plane_coords()))
    return tio.write_pgm(s.mask, path, overlay=overlay)


@dataclass(frozen=True)
class RunConfig:
    command: str
    name: str | None = None
    poly: str | None = None
    mode: str = "compact"
    points: str | None = None
    eps: float | None = None
    delta: float | None = None
    n: int = 2
    L: float | None = None
    h: float | None = None
    omega: float | None = None
    tol: float | None = None
    tauc: float | None = None
    workers: int = 1
    sweep: str = "lexicographic"
    out: str | None = None
    seed: int = 0
    dump_grid: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        need = {"example": ["name"], "solve": ["poly"], "approx": ["points", "eps"], "subsets": ["poly", "delta"]}
        for key in need.get(self.command, []):
            if getattr(self, key) is None:
                raise ConfigError(f"{self.command} needs --{key}")
        if self.command == "example" and self.name not in NAMED_EXAMPLES:
            raise ConfigError(f"unknown example {self.name!r}; choose from {', '.join(sorted(NAMED_EXAMPLES))}")
        if self.mode not in ("compact", "positivity"):
            raise ConfigError("mode must be 'compact' or 'positivity'")
        if self.sweep not in ("lexicographic", "redblack"):
            raise ConfigError("sweep must be 'lexicographic' or 'redblack'")
        if self.n not in (1, 2):
            raise ConfigError("n must be 1 or 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.omega is not None and not 0 < self.omega < 2:
            raise ConfigError("omega must lie in (0, 2)")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.tauc is not None and not self.tauc >= 0:
            raise ConfigError("tauc must be nonnegative")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.delta is not None and not 0 < self.delta <= 0.5:
            raise ConfigError("delta must lie in (0, 1/2]")
        grid = self.grid()
        try:
            build_domain(grid.n, grid.L, grid.h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def pinned_grid(self):
        if self.command == "example":
            return NAMED_EXAMPLES[self.name][1]
        if self.command == "approx":
            return APPROX_GRID
        if self.command == "solve" and self.mode == "positivity":
            return POSITIVITY_GRID
        return NAMED_GRID

    def grid(self):
        g = self.pinned_grid()
        changes = {"n": self.n, "sweep": self.sweep, "workers": self.workers}
        for key, attr in (("L", "L"), ("h", "h"), ("omega", "omega"), ("tol", "tol"), ("tauc", "tau_c")):
            if getattr(self, key) is not None:
                changes[attr] = getattr(self, key)
        return replace(g, **changes)

    def run_name(self):
        if self.command == "example":
            return self.name
        if self.command == "solve":
            return f"solve-{self.mode}"
        return self.command

    def out_dir(self):
        if self.out is not None:
            return Path(self.out)
        return Path(os.environ.get("THINFREE_OUT", "runs")) / self.run_name()


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CONFIG_KEYS = set(_TYPES) - {"command"}


def _convert(key, text):
    kind = _TYPES[key]
    try:
        if "bool" in kind:
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value.strip())
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--L", type=float, help="half-width of the box")
    p.add_argument("--h", type=float, help="mesh size")
    p.add_argument("--n", type=int, help="plane dimension (1 or 2)")
    p.add_argument("--omega", type=float, help="relaxation factor (default: optimal for the grid)")
    p.add_argument("--tol", type=float, help="stopping tolerance on the sweep update")
    p.add_argument("--tauc", type=float, help="contact band")
    p.add_argument("--workers", type=int)
    p.add_argument("--sweep", choices=["lexicographic", "redblack"])
    p.add_argument("--out", help="output directory (default: $THINFREE_OUT/<run>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="file of 'key = value' lines")
    p.add_argument("--dump-grid", action="store_true", default=None, help="also write every grid node as CSV")


def build_parser():
    parser = _Parser(prog="thinfree", description="Thin obstacle problems with prescribed free boundaries.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    p = sub.add_parser("example", help="run a pinned example")
    p.add_argument("name", nargs="?", help=", ".join(sorted(NAMED_EXAMPLES)))
    _add_common(p)
    p = sub.add_parser("solve", help="solve for a polynomial obstacle or boundary datum")
    p.add_argument("--poly")
    p.add_argument("--mode", choices=["compact", "positivity"])
    _add_common(p)
    p = sub.add_parser("approx", help="approximate a point cloud by a contact set")
    p.add_argument("--points", help="CSV of x,y rows")
    p.add_argument("--eps", type=float)
    _add_common(p)
    p = sub.add_parser("subsets", help="raise k until the sublevel set is in contact")
    p.add_argument("--poly")
    p.add_argument("--delta", type=float)
    _add_common(p)
    p = sub.add_parser("verify", help="randomised property suite")
    _add_common(p)
    return parser


def parse_config(argv):
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise ConfigError(f"missing command; choose from {', '.join(COMMANDS)}")
    values = read_config_file(ns.config) if ns.config else {}
    for key, value in vars(ns).items():
        if key not in ("command", "config") and value is not None:
            values[key] = value
    return RunConfig(command=ns.command, **values).validate()


def _execute(cfg, out_dir):
    grid = cfg.grid()
    name = cfg.run_name()
    if cfg.command == "example":
        return run_named_example(cfg.name, grid, out_dir)
    if cfg.command == "verify":
        return run_property_suite(cfg.seed)
    if cfg.command == "approx":
        points = tio.read_points_csv(cfg.points)
        return run_thm_approx(points, cfg.eps, grid, name=name, out_dir=out_dir)
    poly = parse_poly(cfg.poly, grid.n)
    if cfg.command == "subsets":
        return run_prop_subsets(poly, cfg.delta, grid, name=name, out_dir=out_dir)
    if cfg.mode == "positivity":
        return run_bounded_positivity(poly, grid, name=name, out_dir=out_dir)
    return run_compact_contact(poly, grid, name=name, out_dir=out_dir)


def dispatch(argv):
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"thinfree: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = cfg.out_dir()
    params = {k: v for k, v in asdict(cfg).items() if k != "out"}
    params["grid"] = cfg.grid().as_dict()
    start = time.perf_counter()
    try:
        report = _execute(cfg, out_dir)
    except (ConfigError, PolynomialSyntaxError, OSError) as exc:
        print(f"thinfree: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ClassPreconditionError) as exc:
        report = getattr(exc, "report", None) or PipelineReport(name=cfg.run_name(), inputs=params)
        report.log["error"] = str(exc)
        print(f"thinfree: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"thinfree: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.dump_grid and "field" in report.data:
        report.artifacts.append(tio.write_grid_csv(report.data["field"], out_dir / f"{report.name}_grid.csv").name)
    path = tio.write_report(report, out_dir / f"{report.name}_report.json")
    tio.append_manifest(out_dir, report.name, params, report.passed, time.perf_counter() - start)
    for c in report.failed_checks():
        print(f"FAIL {c.anchor}: {c.description} {c.relation} {c.predicted} (measured {c.measured})", file=sys.stderr)
    print(f"{report.name}: {'pass' if report.passed else 'fail'} -> {path}")
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
