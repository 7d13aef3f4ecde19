"""Command-line entry point: ``riskprobe {run,montecarlo,validate,riskdemo}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import ConfigError, bundled_config_path, load_config
from .demo import risk_demo, write_risk_csv
from .planner import VARIANTS
from .sim.campaign import EpisodeResult, episode_rows, run_episode_result, run_monte_carlo, write_table_csv

logger = logging.getLogger(__name__)

COMMANDS = ("run", "montecarlo", "validate", "riskdemo")


@dataclass(frozen=True)
class RunSpec:
    command: str
    config_path: Path | None
    variant: str
    episodes: int
    seed: int | None
    output_dir: Path
    threads: int = 1

    @property
    def variants(self) -> tuple[str, ...]:
        return VARIANTS if self.variant == "all" else (self.variant,)


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def resolve_config(name: str) -> Path | None:
    """A path as given, else a bundled config of that name, else ``None``."""
    path = Path(name)
    if path.is_file():
        return path
    bundled = bundled_config_path(path.name)
    return bundled if bundled.is_file() else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config: bool, default_variant: str, default_episodes: int):
        p.add_argument("--config", required=needs_config,
                       help="config file, or the name of a bundled config such as merge_a2.cfg")
        p.add_argument("--variant", choices=VARIANTS + ("all",), default=default_variant)
        p.add_argument("--episodes", type=_positive, default=default_episodes)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=_positive, default=1, help="worker processes")

    common(sub.add_parser("run", help="run episodes of one scenario"), True, "probing", 1)
    common(sub.add_parser("montecarlo", help="randomized campaign over planner variants"), True, "all", 50)
    common(sub.add_parser("validate", help="check a config and run it; non-zero exit on collision"),
           True, "probing", 1)
    p = sub.add_parser("riskdemo", help="write risk curves of the two-agent demo scene")
    p.add_argument("--out", default="out", help="output directory")
    return parser


def parse_args(argv: Sequence[str] | None = None) -> RunSpec:
    """Parse and validate arguments; exits with status 2 on usage errors."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    config_path = None
    if ns.command != "riskdemo":
        config_path = resolve_config(ns.config)
        if config_path is None:
            parser.error(f"config not found: {ns.config}")
    return RunSpec(ns.command, config_path, getattr(ns, "variant", "probing"), getattr(ns, "episodes", 1),
                   getattr(ns, "seed", None), Path(ns.out), getattr(ns, "threads", 1))


def _print_table(rows: list[dict]) -> None:
    cols = list(rows[0])
    print(",".join(cols))
    for r in rows:
        print(",".join(f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in cols))


def _write_episodes(results: list[EpisodeResult], out: Path) -> None:
    traces = out / "traces"
    rows = episode_rows(results)
    for n, (r, row) in enumerate(zip(results, rows)):
        name = f"episode_{n}.jsonl"
        r.trace.write_jsonl(traces / name)
        row["trace"] = f"traces/{name}"
    write_table_csv(rows, out / "metrics.csv")


def cmd_run(spec: RunSpec, validate: bool = False) -> int:
    cfg = load_config(spec.config_path)
    seed = cfg.rng_seed if spec.seed is None else spec.seed
    results = []
    for variant in spec.variants:
        for ep in range(spec.episodes):
            r = run_episode_result((cfg, variant, ep, seed + ep), record_diagnostics=True)
            results.append(r)
            t = r.trace
            done = "" if t.completion_time is None else f" at {t.completion_time:.1f} s"
            hit = f" with {t.collision_with}" if t.collision_with else ""
            print(f"{cfg.name} {variant} episode {ep}: {t.outcome}{done}{hit}")
    _write_episodes(results, spec.output_dir)
    if validate and any(r.metrics.collision for r in results):
        return 1
    return 0


def cmd_montecarlo(spec: RunSpec) -> int:
    cfg = load_config(spec.config_path)
    seed = cfg.rng_seed if spec.seed is None else spec.seed
    camp = run_monte_carlo(cfg, spec.episodes, spec.variants, seed=seed, workers=spec.threads)
    _write_episodes(camp.results, spec.output_dir)
    table = camp.table()
    write_table_csv(table, spec.output_dir / "campaign_summary.csv")
    _print_table(table)
    return 0


def cmd_riskdemo(spec: RunSpec) -> int:
    path = write_risk_csv(risk_demo(), spec.output_dir / "risk_curves.csv")
    print(f"wrote {path}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    spec = parse_args(argv)
    try:
        if spec.command == "riskdemo":
            return cmd_riskdemo(spec)
        if spec.command == "montecarlo":
            return cmd_montecarlo(spec)
        return cmd_run(spec, validate=spec.command == "validate")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
