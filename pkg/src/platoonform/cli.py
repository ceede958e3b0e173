"""Command line: single runs and parameter sweeps.

``platoonform run`` executes one scenario and writes ``vehicles.csv``,
``formation.csv``, ``summary.csv``, ``config.txt`` and ``manifest.json``.
``platoonform sweep`` fans runs out over a process pool and merges their
summaries. Configuration is a flat ``key=value`` file in SI units; flags
override the file and the file overrides the built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .metrics import (
    SUMMARY_COLUMNS,
    aggregate,
    format_value,
    write_executions,
    write_rows,
    write_summary,
    write_trips,
)
from .model import Approach, FormationParams, ScenarioConfig, desk_scale
from .traffic import InvariantViolation, WorldState, prefill, run_simulation

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

OUT_DIR_ENV = "PLATOONFORM_OUT"
DEFAULT_OUT_DIR = "platoonform-out"

KEY_COLUMNS = ["approach", "speed_window", "density", "seed"]
FIGURE_COLUMNS = {
    3: ["found_mean", "found_std", "found_per_execution_mean"],
    4: ["filtered_mean", "filtered_std", "filtered_per_execution_mean"],
    5: ["time_to_platoon_mean", "time_to_platoon_std", "platooned_share"],
    6: ["platoon_size_mean", "platoon_size_hist"],
    7: ["departure_flow", "observed_density", "observed_flow"],
    8: ["mean_speed"],
    9: ["deviation_mean", "deviation_q1", "deviation_median", "deviation_q3", "abs_deviation_mean"],
    10: ["window_violation"],
    11: ["travel_time_ratio_mean", "travel_time_ratio_q1", "travel_time_ratio_median", "travel_time_ratio_q3"],
    12: ["fuel_l_per_100km_mean", "fuel_l_per_100km_std"],
    13: ["solve_time_mean", "solve_time_std", "gap_max"],
}

TRACE_COLUMNS = ["time", "id", "lane", "position", "speed", "acceleration", "role", "platoon_id"]


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------------

_FORMATION_KEYS = {f.name: f.type for f in dataclasses.fields(FormationParams)}
_SCENARIO_KEYS = {f.name: f.type for f in dataclasses.fields(ScenarioConfig) if f.name != "formation"}
CONFIG_KEYS = sorted({**_SCENARIO_KEYS, **_FORMATION_KEYS})


def _convert(key: str, raw: str):
    kind = {**_SCENARIO_KEYS, **_FORMATION_KEYS}[key]
    text = raw.strip()
    if kind == "Approach":
        try:
            return Approach[text.upper()]
        except KeyError:
            raise ValueError(f"unknown approach {text!r}; choose from {', '.join(a.name for a in Approach)}")
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    return float(text)


def config_from_pairs(pairs: Sequence[tuple[str, str, int]], source: str = "<config>",
                      base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Build a config from ``(key, raw value, line number)`` triples."""
    base = base or ScenarioConfig()
    values = {}
    lines = {}
    for key, raw, lineno in pairs:
        if key not in _SCENARIO_KEYS and key not in _FORMATION_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
        lines[key] = lineno
    try:
        return base.with_(**values)
    except ValueError as exc:
        # name the offending key when a single override is out of range on its own
        for key, value in values.items():
            try:
                base.with_(**{key: value})
            except ValueError as single:
                raise ConfigError(f"{source}:{lines[key]}: {key}: {single}") from None
        where = ", ".join(f"{k} (line {lines[k]})" for k in values)
        raise ConfigError(f"{source}: inconsistent values among {where}: {exc}") from None


def parse_config(path, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Read a flat ``key=value`` file; ``#`` starts a comment.

    A run's ``manifest.json`` is accepted too, so any run can be repeated
    from its manifest alone.

    Raises
    ------
    ConfigError
        Missing file, malformed line, unknown key or out-of-range value.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            echo = json.loads(path.read_text(encoding="utf-8"))["config"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
        return config_from_pairs([(k, str(v), 0) for k, v in echo.items()], str(path), base)
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
        key, raw = text.split("=", 1)
        pairs.append((key.strip(), raw, lineno))
    return config_from_pairs(pairs, str(path), base)


def config_to_pairs(config: ScenarioConfig) -> list[tuple[str, str]]:
    flat = {f.name: getattr(config, f.name) for f in dataclasses.fields(config) if f.name != "formation"}
    flat.update({f.name: getattr(config.formation, f.name) for f in dataclasses.fields(config.formation)})
    out = []
    for key in sorted(flat):
        value = flat[key]
        if isinstance(value, Approach):
            text = value.name
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value)
        out.append((key, text))
    return out


def config_text(config: ScenarioConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in config_to_pairs(config))


# --- single run ------------------------------------------------------------------------


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_labels(config: ScenarioConfig) -> dict:
    return {
        "approach": config.approach.name,
        "speed_window": config.formation.speed_window if config.approach.is_platooning else "",
        "density": config.target_density,
        "seed": config.seed,
    }


def run(config: ScenarioConfig, out_dir, figure: Optional[int] = None) -> int:
    """Simulate one scenario and write its result files. Returns an exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(config), encoding="utf-8")
    manifest = {
        "version": _version(),
        "seed": config.seed,
        "approach": config.approach.name,
        "config": dict(config_to_pairs(config)),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    world = WorldState.create(config)
    try:
        if config.prefill:
            prefill(world)
        run_simulation(config, world)
    except InvariantViolation as exc:
        LOG.error("invariant violated: %s", exc)
        (out / "invariant_dump.json").write_text(json.dumps(exc.dump, indent=1, sort_keys=True), encoding="utf-8")
        return EXIT_INVARIANT
    ledger = world.ledger
    write_trips(out / "vehicles.csv", ledger.trips)
    write_executions(out / "formation.csv", ledger.executions)
    rows = aggregate(ledger, run_labels(config), config.formation.speed_window)
    write_summary(out / "summary.csv", rows)
    if world.trace is not None:
        write_rows(out / "trace.csv", TRACE_COLUMNS, (dict(zip(TRACE_COLUMNS, r)) for r in world.trace))
    if figure is not None:
        write_summary(out / f"figure_{figure}.csv", rows, figure_columns(figure))
    LOG.info("wrote results to %s", out)
    return EXIT_OK


def figure_columns(figure: int) -> list[str]:
    if figure not in FIGURE_COLUMNS:
        raise ConfigError(f"no preset for figure {figure}; choose from {sorted(FIGURE_COLUMNS)}")
    return KEY_COLUMNS + FIGURE_COLUMNS[figure]


# --- sweeps -------------------------------------------------------------------------------


@dataclass
class SweepSpec:
    """Cartesian product of runs.

    Platooning approaches vary the speed window; HUMAN and ACC do not
    depend on it and run once per density and repetition.
    """

    approaches: set = field(default_factory=set)
    speed_windows: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    repetitions: int = 1
    base_seed: int = 42

    def runs(self) -> list[tuple[Approach, Optional[float], float, int]]:
        out = []
        for approach in sorted(self.approaches, key=lambda a: list(Approach).index(a)):
            windows = self.speed_windows if approach.is_platooning else [None]
            for m in windows:
                for density in self.densities:
                    for rep in range(self.repetitions):
                        out.append((approach, m, density, rep))
        return out

    @property
    def size(self) -> int:
        return len(self.runs())


def run_seed(base_seed: int, approach: Approach, m: Optional[float], density: float, rep: int) -> int:
    """Seed derived from the run's coordinates only, so each run is reproducible on its own."""
    key = f"{base_seed}|{approach.name}|{'' if m is None else repr(float(m))}|{float(density)!r}|{rep}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "big") & 0x7FFFFFFF


def run_id(approach: Approach, m: Optional[float], density: float, rep: int) -> str:
    window = "na" if m is None else f"{m:g}"
    return f"{approach.name}_m{window}_d{density:g}_r{rep}"


def _sweep_worker(args) -> tuple[str, int, list[dict], str]:
    base, approach, m, density, rep, base_seed, out_dir = args
    rid = run_id(approach, m, density, rep)
    try:
        changes = {"approach": approach, "target_density": density, "seed": run_seed(base_seed, approach, m, density, rep)}
        if m is not None:
            changes["speed_window"] = m
        config = base.with_(**changes)
    except ValueError as exc:
        return rid, EXIT_CONFIG, [], str(exc)
    try:
        code = run(config, Path(out_dir) / "runs" / rid)
    except Exception as exc:  # isolate one broken run from the rest of the sweep
        LOG.exception("run %s failed", rid)
        return rid, EXIT_FAILED, [], repr(exc)
    if code != EXIT_OK:
        return rid, code, [], f"exit {code}"
    rows = _read_summary(Path(out_dir) / "runs" / rid / "summary.csv")
    return rid, EXIT_OK, rows, ""


def _read_summary(path: Path) -> list[dict]:
    import csv

    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sweep(spec: SweepSpec, base: ScenarioConfig, out_dir, jobs: int = 1, figure: Optional[int] = None) -> int:
    """Run every point of ``spec`` and merge the per-run summaries.

    A failing run does not stop the others; the exit code is the worst one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(base, a, m, d, r, spec.base_seed, str(out)) for a, m, d, r in spec.runs()]
    if jobs <= 1 or len(tasks) <= 1:
        results = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    rows = []
    worst = EXIT_OK
    failures = []
    for rid, code, run_rows, message in results:
        if code != EXIT_OK:
            worst = max(worst, code)
            failures.append({"run_id": rid, "exit_code": code, "message": message})
            LOG.error("run %s failed (%s)", rid, message)
        for row in run_rows:
            rows.append({"run_id": rid, **row})
    rows.sort(key=lambda r: (r["approach"], r["speed_window"], _as_float(r["density"]), _as_float(r["seed"]), r["run_id"]))
    columns = ["run_id"] + SUMMARY_COLUMNS
    write_rows(out / "summary.csv", columns, rows)
    if figure is not None:
        write_rows(out / f"figure_{figure}.csv", ["run_id"] + figure_columns(figure), rows)
    write_rows(out / "failures.csv", ["run_id", "exit_code", "message"], failures)
    return worst


def _as_float(text) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return float("nan")


# --- argument parsing --------------------------------------------------------------------------


def _default_out() -> str:
    return os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("--desk", action="store_true", help="start from the 10 km desk-scale defaults")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    p.add_argument("--figure", type=int, choices=sorted(FIGURE_COLUMNS), help="also write the columns behind one figure")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoonform", description="Platoon formation on a simulated freeway.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    _common(p_run)
    p_run.add_argument("--approach", choices=[a.name for a in Approach])
    p_run.add_argument("--density", type=float, help="target vehicles per lane-km")
    p_run.add_argument("--speed-window", type=float, help="allowed relative speed deviation m")
    p_run.add_argument("--trace", action="store_true", help="write the per-step trace.csv")

    p_sweep = sub.add_parser("sweep", help="run a grid of scenarios")
    _common(p_sweep)
    p_sweep.add_argument("--approaches", nargs="*", choices=[a.name for a in Approach],
                         default=[a.name for a in Approach])
    p_sweep.add_argument("--speed-windows", nargs="*", type=float, default=[0.1, 0.2, 0.3])
    p_sweep.add_argument("--densities", nargs="*", type=float, default=[5, 10, 15, 20, 25])
    p_sweep.add_argument("--repetitions", type=int, default=1)
    p_sweep.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    return parser


def _base_config(args) -> ScenarioConfig:
    base = desk_scale() if args.desk else ScenarioConfig()
    if args.config:
        base = parse_config(args.config, base)
    pairs = []
    for i, item in enumerate(args.set, start=1):
        if "=" not in item:
            raise ConfigError(f"--set #{i}: expected KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        pairs.append((key.strip(), raw, i))
    if pairs:
        base = config_from_pairs(pairs, "--set", base)
    if args.seed is not None:
        base = base.with_(seed=args.seed)
    return base


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out_dir or _default_out()
    try:
        base = _base_config(args)
        if args.command == "run":
            changes = {}
            if args.approach:
                changes["approach"] = Approach[args.approach]
            if args.density is not None:
                changes["target_density"] = args.density
            if args.speed_window is not None:
                changes["speed_window"] = args.speed_window
            if args.trace:
                changes["trace"] = True
            try:
                config = base.with_(**changes)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            return run(config, out_dir, args.figure)
        spec = SweepSpec(
            approaches={Approach[a] for a in args.approaches},
            speed_windows=list(args.speed_windows),
            densities=list(args.densities),
            repetitions=args.repetitions,
            base_seed=base.seed,
        )
        return sweep(spec, base, out_dir, args.jobs, args.figure)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
