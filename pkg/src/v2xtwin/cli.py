"""Command-line entry points: replay, predict, bench-di and sweep-k.

Every flag can also be set through an environment variable named
``V2XTWIN_`` plus the flag's destination in upper case (``--out-dir`` is
``V2XTWIN_OUT_DIR``, ``--coherent/--incoherent`` is ``V2XTWIN_MODE``).
Command-line values win over the environment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import DEFAULT_K_GRID, monotonicity, sweep, write_sweep_csv, write_sweep_metadata
from .channel.detail import DetailIndexError, detail_index
from .channel.links import predict_links, write_paths_csv
from .replay import ReplayOptions, run_replay
from .scenario import Scenario, ScenarioError, load_scenario, place, resolve_scene
from .scene.model import Pose, SceneError, load_scene

log = logging.getLogger("v2xtwin")

ENV_PREFIX = "V2XTWIN_"


class CliError(Exception):
    pass


class Outputs:
    """Tracks files written by a command so a failed run leaves nothing behind."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass

    def manifest(self, command: str, args: dict, measured: tuple = ()) -> Path:
        entries = []
        for p in self.files:
            if p.exists():
                entries.append({"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        doc = {"command": command, "version": __version__, "args": args, "files": entries,
               "measured_fields": list(measured)}
        mp = self.path("manifest.json")
        mp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return mp


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {v!r}")


def _apply_env(parser: argparse.ArgumentParser, env) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env(sub, env)
            continue
        if action.dest in ("help", argparse.SUPPRESS):
            continue
        raw = env.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _parse_bool(raw)
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        parser.set_defaults(**{action.dest: value})


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", help="scene JSON file or bundled scene name")
    p.add_argument("--scenario", help="scenario JSON file or bundled scenario name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--di", type=int, help="Detail Index 1..5")
    p.add_argument("--h-ms", type=float, help="prediction horizon (ms)")
    p.add_argument("--dt-pe-ms", type=float, help="reporting period (ms)")
    p.add_argument("--ray-cap", type=int, help="runtime cap on rays per source")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--coherent", dest="mode", action="store_const", const="coherent")
    g.add_argument("--incoherent", dest="mode", action="store_const", const="incoherent")
    p.add_argument("--log-level", default="WARNING")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2xtwin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="run a scenario through the twin over UDP loopback")
    _add_common(p)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--engine", choices=("udp", "local", "mock"), default="udp")
    p.add_argument("--mock-cost-ms", type=float, default=0.0)
    p.add_argument("--noise-db", type=float)
    p.add_argument("--truth-di", type=int)

    p = sub.add_parser("predict", help="one-shot channel prediction")
    _add_common(p)
    p.add_argument("--poses", help="JSON file with entities and links")
    p.add_argument("--links", help="comma-separated a:b pairs (default: all scenario links)")
    p.add_argument("--t", type=float, default=0.0, help="scenario time for entity poses (s)")
    p.add_argument("--tx-power-dbm", type=float)
    p.add_argument("--timing", action="store_true", help="include measured tau_rt_ms")

    p = sub.add_parser("bench-di", help="channel computation time per Detail Index")
    _add_common(p)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--t", type=float, help="scenario time for entity poses (s)")
    p.add_argument("--mock", action="store_true", help="zero-cost engine, for plumbing checks")

    p = sub.add_parser("sweep-k", help="position-error sensitivity sweep")
    _add_common(p)
    p.add_argument("--k-grid", help="comma-separated k values (default 0..1 step 0.05)")
    p.add_argument("--seeds", type=int, default=200, help="number of seeds starting at --seed")
    p.add_argument("--instants", type=int)
    p.add_argument("--link", help="a:b (default: first scenario link)")
    p.add_argument("--bootstrap", type=int, default=2000)
    return parser


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise CliError("--scenario is required for this command")
    sc = load_scenario(args.scenario)
    if args.scene:
        sc = Scenario(**{**{f: getattr(sc, f) for f in sc.__dataclass_fields__ if f != "_scene"},
                         "scene_ref": args.scene, "base_dir": Path.cwd()})
        sc.validate_scene()
    return sc


def _link(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2 or not all(parts):
        raise CliError(f"bad link {text!r}, expected a:b")
    return parts[0], parts[1]


def _di(level, ray_cap):
    try:
        return detail_index(level, ray_cap)
    except DetailIndexError as exc:
        raise CliError(str(exc)) from None


def _json_out(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def cmd_replay(args, outputs: Outputs) -> int:
    sc = _scenario(args)
    opts = ReplayOptions(seed=args.seed, di=args.di, h_ms=args.h_ms, dt_pe_ms=args.dt_pe_ms,
                         duration_s=args.duration_s, mode=args.mode, engine=args.engine,
                         mock_cost_ms=args.mock_cost_ms, noise_db=args.noise_db,
                         truth_di=args.truth_di, ray_cap=args.ray_cap)
    for name in ("events.jsonl", "predictions.csv", "latency.csv", "latency_summary.csv", "run_report.json"):
        outputs.path(name)
    report = run_replay(sc, outputs.dir, opts)
    outputs.manifest("replay", vars(args), measured=("latency.csv", "latency_summary.csv", "events.jsonl",
                                                      "run_report.json"))
    print(_json_out({k: v for k, v in report.to_dict().items() if k != "latency"}), end="")
    return 0


def _predict_inputs(args):
    """(static scene, poses, templates, links, tx power) from --poses or --scenario."""
    if args.poses:
        try:
            doc = json.loads(Path(args.poses).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read poses file: {exc}") from None
        scene_ref = args.scene or doc.get("scene")
        if not scene_ref:
            raise CliError("a scene is required (--scene or 'scene' in the poses file)")
        scene = load_scene(resolve_scene(scene_ref, Path(args.poses).parent))
        poses, templates = {}, {}
        for e in doc.get("entities", []):
            p = e["pose"]
            poses[e["id"]] = Pose(float(p["x"]), float(p["y"]), float(p.get("z", 0.0)), float(p.get("yaw", 0.0)))
            templates[e["id"]] = e.get("template")
        links = [tuple(l) for l in doc.get("links", [])]
        tx = doc.get("tx_power_dbm", 10.0)
        di = doc.get("di", 1)
    else:
        sc = _scenario(args)
        scene = sc.scene()
        poses = sc.frame(args.t)
        templates = sc.templates
        links = list(sc.links)
        tx = sc.twin.tx_power_dbm
        di = sc.twin.di
    if args.links:
        links = [_link(s) for s in args.links.split(",")]
    if args.tx_power_dbm is not None:
        tx = args.tx_power_dbm
    if args.di is not None:
        di = args.di
    return scene, poses, templates, links, tx, di


def cmd_predict(args, outputs: Outputs) -> int:
    scene, poses, templates, links, tx, level = _predict_inputs(args)
    di = _di(level, args.ray_cap)
    placed = place(scene, poses, templates)
    pred = predict_links(placed, links, di, tx, args.seed, args.mode or "coherent")
    tau = pred.tau_rt_ms if args.timing else None
    doc = {"links": [pred.realizations[l].to_record(tau) for l in pred.realizations],
           "measured_fields": ["tau_rt_ms"], "tx_power_dbm": tx, "seed": args.seed}
    text = _json_out(doc)
    outputs.path("prediction.json").write_text(text)
    write_paths_csv(pred.realizations.values(), outputs.path("paths.csv"))
    outputs.manifest("predict", vars(args), measured=("tau_rt_ms",) if args.timing else ())
    print(text, end="")
    return 0


def cmd_bench_di(args, outputs: Outputs) -> int:
    sc = _scenario(args)
    reps = args.repetitions or sc.bench.repetitions
    if reps < 1:
        raise CliError("--repetitions must be >= 1")
    cap = args.ray_cap or sc.bench.ray_cap
    t = sc.bench.t if args.t is None else args.t
    placed = place(sc.scene(), sc.frame(t), sc.templates)
    levels = range(1, 6)
    samples: dict[int, list[float]] = {}
    # warm-up compiles the kernels outside the measurement
    if not args.mock:
        predict_links(placed, sc.links, _di(5, 1000), sc.twin.tx_power_dbm)
    for level in levels:
        di = _di(level, cap)
        samples[level] = []
        for _ in range(reps):
            if args.mock:
                t0 = time.perf_counter()
                samples[level].append((time.perf_counter() - t0) * 1e3)
                continue
            pred = predict_links(placed, sc.links, di, sc.twin.tx_power_dbm, args.seed, args.mode or "coherent")
            samples[level].append(pred.tau_rt_ms)
    p = outputs.path("bench_di.csv")
    with open(p, "w") as fh:
        fh.write("di,rep,tau_rt_ms,rays_per_source,rays_nominal\n")
        for level in levels:
            di = _di(level, cap)
            for i, v in enumerate(samples[level]):
                fh.write(f"{level},{i},{v!r},{di.rays_per_source},{di.rays_nominal}\n")
    medians = {level: statistics.median(v) for level, v in samples.items()}
    monotone = all(medians[a] < medians[b] for a, b in zip(levels, list(levels)[1:]))
    summary = {"median_tau_rt_ms": {str(k): v for k, v in medians.items()}, "strictly_increasing": monotone,
               "ray_cap": cap, "repetitions": reps, "links": [list(l) for l in sc.links], "mock": args.mock}
    outputs.path("bench_summary.json").write_text(_json_out(summary))
    outputs.manifest("bench-di", vars(args), measured=("tau_rt_ms",))
    print(_json_out(summary), end="")
    if not monotone and not args.mock:
        log.warning("median tau_rt is not strictly increasing with DI: %s", medians)
    return 0


def cmd_sweep_k(args, outputs: Outputs) -> int:
    sc = _scenario(args)
    s = sc.sweep
    grid = DEFAULT_K_GRID if not args.k_grid else tuple(float(v) for v in args.k_grid.split(","))
    link = _link(args.link) if args.link else sc.links[0]
    instants = args.instants or s.instants
    times = np.linspace(s.t_start, s.t_end, instants)
    frames = [sc.frame(float(t)) for t in times]
    di = _di(args.di or s.di, args.ray_cap)
    seeds = range(args.seed, args.seed + args.seeds)
    try:
        result = sweep(sc.scene(), frames, sc.templates, link, di, grid, seeds, s.eps_max_m,
                       sc.perturb, sc.twin.tx_power_dbm, args.mode or "coherent")
    except ValueError as exc:
        raise CliError(str(exc)) from None
    checks = monotonicity(result, n_boot=args.bootstrap, seed=args.seed)
    result.metadata["trend_violations"] = [c.__dict__ for c in checks if c.violated]
    result.metadata["times_s"] = [float(t) for t in times]
    write_sweep_csv(result, outputs.path("sweep.csv"))
    write_sweep_metadata(result, outputs.path("sweep_meta.json"))
    outputs.manifest("sweep-k", vars(args))
    print(_json_out({"summary": result.summary(), "trend_violations": len(result.metadata["trend_violations"])}), end="")
    return 0


COMMANDS = {"replay": cmd_replay, "predict": cmd_predict, "bench-di": cmd_bench_di, "sweep-k": cmd_sweep_k}


def main(argv: Optional[list[str]] = None, env=None) -> int:
    parser = build_parser()
    _apply_env(parser, os.environ if env is None else env)
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    outputs = Outputs(args.out_dir)
    try:
        return COMMANDS[args.command](args, outputs)
    except (CliError, ScenarioError, SceneError, DetailIndexError) as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        outputs.discard()
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
