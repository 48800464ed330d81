"""
Command-Line Entry Point

Subcommands:
    sim          scenario file -> ground truth, odometry and detections
    run          detections + odometry (or a scenario) -> trajectories, map, loop log, metrics
    eval         two TUM trajectories -> AteReport JSON on standard output
    pr           loop attempt log -> precision/recall CSV
    export-plot  run directory -> plot-ready CSV tables
    batch        many seeds of one scenario in a process pool -> per-seed summary CSV
    serve        HTTP service

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

Author: LunaLynx12
"""

from simulation import GroundTruth, Scenario, objects_from_json, objects_to_json, simulate
from pipeline import PipelineResult, load_observations, run_pipeline, run_scenario
from models import LoopAttempt, PipelineConfig, ScenarioConfig
from concurrent.futures import ProcessPoolExecutor
from evaluation import Trajectory, ate, pr_curve
from errors import SemLoopError, exit_code
from features import write_detections
from typing import Optional, Sequence
from pydantic import ValidationError
from pathlib import Path
import pandas as pd
import argparse
import formats
import logging
import uvicorn
import config
import json
import sys


log = logging.getLogger(__name__)

PR_COLUMNS = ["threshold", "precision", "recall", "tp", "fp", "fn"]
RUNTIME_COLUMNS = ["stage", "mean_ms", "max_ms"]
ATTEMPT_COLUMNS = ["frame", "loop_frame", "score", "n_matches", "declared", "opportunity", "event",
                   "position_error", "loop_rotation_deg", "rotation_error_deg"]
BATCH_COLUMNS = ["seed", "frames", "landmarks", "loops", "ate_before_rmse", "ate_after_rmse",
                 "association_accuracy", "map_mean_iou", "digest"]


class UsageParser(argparse.ArgumentParser):
    """
    Argument parser that exits with code 1 on usage errors.
    """
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    common.add_argument("--config", default=None, help="JSON settings file (scenario for sim, pipeline otherwise)")
    common.add_argument("--out", default=None, help="Output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = UsageParser(prog="semloop", description="Object-level semantic mapping with scene-graph loop closure")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    sub.add_parser("sim", parents=[common], help="Generate a scenario")

    run = sub.add_parser("run", parents=[common], help="Run the back-end")
    run.add_argument("input", nargs="?", help="Directory holding obs.jsonl and odom.tum (gt.tum, objects.json optional)")
    run.add_argument("--scenario", help="Scenario JSON to simulate instead of reading an input directory")
    run.add_argument("--diagnostics", help="Directory for one Gauss-Newton trace CSV per solve")

    ev = sub.add_parser("eval", parents=[common], help="ATE of an estimated trajectory")
    ev.add_argument("est", help="Estimated TUM trajectory")
    ev.add_argument("gt", help="Ground-truth TUM trajectory")
    ev.add_argument("--with-scale", action="store_true", help="Estimate a similarity instead of a rigid alignment")
    ev.add_argument("--no-align", action="store_true", help="Compare positions without alignment")

    pr = sub.add_parser("pr", parents=[common], help="Precision/recall of a loop attempt log")
    pr.add_argument("attempts", help="Attempt log JSONL")
    pr.add_argument("--events", help="Opportunity events JSON written by run")
    pr.add_argument("--tau-l", type=float, default=None, help="Position tolerance in meters")

    plot = sub.add_parser("export-plot", parents=[common], help="Plot-ready CSV tables of a run")
    plot.add_argument("run_dir", help="Directory written by run")

    batch = sub.add_parser("batch", parents=[common], help="Run many seeds in parallel")
    batch.add_argument("--scenario", help="Scenario JSON, default scenario otherwise")
    batch.add_argument("--seeds", type=int, default=10, help="Number of seeds, counted from --seed or 0")
    batch.add_argument("--workers", type=int, default=None, help="Worker processes")

    serve = sub.add_parser("serve", parents=[common], help="Start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1", help="Bind address")
    serve.add_argument("--port", type=int, default=config.api_port, help="FastAPI server port")

    return parser.parse_args(argv)


def _out(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return formats.load_model(args.config, PipelineConfig) if args.config else PipelineConfig()


def _with_solver_trace(cfg: PipelineConfig, directory: str) -> PipelineConfig:
    window = cfg.window.model_copy(update={"solver": cfg.window.solver.model_copy(update={"trace_dir": directory})})
    loop = cfg.loop.model_copy(update={"solver": cfg.loop.solver.model_copy(update={"trace_dir": directory})})
    return cfg.model_copy(update={"window": window, "loop": loop})


def _scenario_config(path: Optional[str], seed: Optional[int]) -> ScenarioConfig:
    cfg = formats.load_model(path, ScenarioConfig) if path else ScenarioConfig()
    return cfg.model_copy(update={"seed": seed}) if seed is not None else cfg


def write_scenario(out: Path, scenario: Scenario) -> None:
    """
    Writes gt.tum, odom.tum, obs.jsonl, objects.json and the scenario echo.
    """
    truth = scenario.truth
    formats.write_tum(str(out / "gt.tum"), Trajectory(truth.stamps, truth.cameras))
    formats.write_tum(str(out / "odom.tum"), Trajectory(truth.stamps, scenario.odometry_trajectory()))
    write_detections(str(out / "obs.jsonl"), {o.frame: o.detections for o in scenario.observations})
    formats.write_json(str(out / "objects.json"), objects_to_json(truth.objects))
    formats.write_json(str(out / "scenario.json"), scenario.config.model_dump())


def write_run(out: Path, result: PipelineResult) -> None:
    formats.write_tum(str(out / "trajectory.tum"), result.trajectory)
    formats.write_tum(str(out / "trajectory_before.tum"), result.trajectory_before)
    if result.ground_truth is not None:
        formats.write_tum(str(out / "gt.tum"), result.ground_truth)
    formats.write_json(str(out / "map.json"), result.snapshot)
    formats.write_json(str(out / "graph.json"), result.graph)
    formats.write_jsonl(str(out / "loops.jsonl"), result.loops)
    formats.write_jsonl(str(out / "attempts.jsonl"), result.attempts)
    formats.write_json(str(out / "opportunities.json"), result.events)
    formats.write_models_csv(str(out / "runtime.csv"), result.runtime, RUNTIME_COLUMNS)
    if result.ate_after is not None:
        formats.write_json(str(out / "ate.json"), {"before": result.ate_before.summary(),
                                                   "after": result.ate_after.summary()})
    formats.write_json(str(out / "summary.json"), result.summary())


def _read_truth(directory: Path) -> Optional[GroundTruth]:
    if not (directory / "gt.tum").exists():
        return None
    gt = formats.read_tum(str(directory / "gt.tum"))
    objects = objects_from_json(formats.read_json(str(directory / "objects.json"))) \
        if (directory / "objects.json").exists() else []
    return GroundTruth(gt.poses, [float(s) for s in gt.stamps], objects)


def cmd_sim(args: argparse.Namespace) -> int:
    scenario = simulate(_scenario_config(args.config, args.seed))
    out = _out(args, "scenario")
    write_scenario(out, scenario)
    log.info(f"[CLI] scenario written to {out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    if args.diagnostics:
        cfg = _with_solver_trace(cfg, args.diagnostics)
    if args.scenario or not args.input:
        result = run_scenario(simulate(_scenario_config(args.scenario, args.seed)), cfg)
    else:
        directory = Path(args.input)
        observations, initial = load_observations(str(directory / "obs.jsonl"), str(directory / "odom.tum"))
        result = run_pipeline(observations, cfg, initial, _read_truth(directory))
    out = _out(args, "run")
    write_run(out, result)
    print(json.dumps(result.summary(), indent=2))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = ate(formats.read_tum(args.est), formats.read_tum(args.gt), with_scale=args.with_scale,
                 align=not args.no_align)
    print(json.dumps(report.summary()))
    return 0


def cmd_pr(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    attempts = formats.read_jsonl(args.attempts, LoopAttempt)
    events = range(len(formats.read_json(args.events))) if args.events else None
    points = pr_curve(attempts, args.tau_l or cfg.tau_l, events=events)
    if args.out:
        formats.write_models_csv(str(_out(args, ".") / "pr.csv"), points, PR_COLUMNS)
    else:
        pd.DataFrame([p.model_dump() for p in points], columns=PR_COLUMNS).to_csv(sys.stdout, index=False)
    return 0


def cmd_export_plot(args: argparse.Namespace) -> int:
    src = Path(args.run_dir)
    out = _out(args, str(src / "plot"))
    for name in ["trajectory", "trajectory_before"]:
        formats.trajectory_frame(formats.read_tum(str(src / f"{name}.tum"))).to_csv(out / f"{name}.csv", index=False)
    if (src / "gt.tum").exists():
        formats.trajectory_frame(formats.read_tum(str(src / "gt.tum"))).to_csv(out / "gt.csv", index=False)

    graph = formats.read_json(str(src / "graph.json"))
    vertices = [{"id": v["id"], "label": v["label"], "x": v["position"][0], "y": v["position"][1],
                 "z": v["position"][2]} for v in graph["vertices"]]
    formats.write_csv(str(out / "graph_vertices.csv"), vertices, ["id", "label", "x", "y", "z"])
    formats.write_csv(str(out / "graph_edges.csv"), [dict(zip(["a", "b", "length"], e)) for e in graph["edges"]],
                      ["a", "b", "length"])

    rows = []
    for a in formats.read_jsonl(str(src / "attempts.jsonl"), LoopAttempt):
        row = a.model_dump()
        row["position_error"] = None if a.gt_position is None else \
            sum((x - y) ** 2 for x, y in zip(a.est_position, a.gt_position)) ** 0.5
        rows.append(row)
    formats.write_csv(str(out / "loop_attempts.csv"), rows, ATTEMPT_COLUMNS)
    log.info(f"[CLI] plot tables written to {out}")
    return 0


def _batch_job(job: tuple) -> dict:
    scenario_cfg, pipeline_cfg = job
    result = run_scenario(simulate(scenario_cfg), pipeline_cfg)
    return {
        "seed": scenario_cfg.seed,
        "frames": len(result.trajectory),
        "landmarks": len(result.snapshot["landmarks"]),
        "loops": len(result.loops),
        "ate_before_rmse": result.ate_before.rmse if result.ate_before else None,
        "ate_after_rmse": result.ate_after.rmse if result.ate_after else None,
        "association_accuracy": result.association_accuracy,
        "map_mean_iou": result.map_iou["mean_iou"] if result.map_iou else None,
        "digest": result.digest,
    }


def cmd_batch(args: argparse.Namespace) -> int:
    base = _scenario_config(args.scenario, None)
    cfg = _pipeline_config(args)
    first = args.seed if args.seed is not None else base.seed
    jobs = [(base.model_copy(update={"seed": first + i}), cfg) for i in range(args.seeds)]
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(_batch_job, jobs))
    out = _out(args, "batch")
    formats.write_csv(str(out / "batch.csv"), rows, BATCH_COLUMNS)
    log.info(f"[CLI] {len(rows)} seeds written to {out / 'batch.csv'}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config.api_port = args.port
    log.info(f"[Main] Launching FastAPI server on port {args.port}")
    uvicorn.run("service:app", host=args.host, port=args.port, reload=False)
    return 0


COMMANDS = {
    "sim": cmd_sim,
    "run": cmd_run,
    "eval": cmd_eval,
    "pr": cmd_pr,
    "export-plot": cmd_export_plot,
    "batch": cmd_batch,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one subcommand and maps failures to exit codes.

    param argv: Arguments without the program name, sys.argv by default
    type argv: Optional[Sequence[str]]
    return: Exit code
    rtype: int
    """
    args = parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SemLoopError, ValidationError, FileNotFoundError, ValueError, ArithmeticError) as e:
        code = exit_code(e)
        print(f"semloop {args.command}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
