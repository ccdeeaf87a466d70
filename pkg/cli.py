"""
Command-line front end. Every subcommand writes a report carrying a run
manifest (parameters, input digests, tool version, seed).

Exit status: 0 on success, 2 for input errors, 3 for constraint violations.
"""
import argparse
import glob
import logging
import os
import sys
from dataclasses import replace

import pandas as pd

import config
import power
import synth
from cascade import load_cascade, save_cascade
from cnngraph import count_macs_total, count_params_total, load_graph
from detector import AccountingMode, PyramidConfig, ScratchBudget, detect
from errors import ConstraintError, InputError, PestKitError
from evaluator import evaluate
from imaging import read_pgm
from mcu_platform import EngineKind, resolve_platform
from report_handler import (ReportHandler, RunManifest, comparison_frame, detections_frame,
                            ledger_frame, load_ground_truth, load_predictions, schedule_frame,
                            train_log_frame)
from scheduler import BudgetConfig, compare_budgets, schedule_and_estimate
from trainer import TrainConfig, train_cascade

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONSTRAINT = 3


def _manifest(args, command, seed=None):
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "verbose")}
    return RunManifest(command, {k: str(v) for k, v in params.items()}, seed=seed)


def _emit(frame, out, manifest, summary=None, stream=None):
    """Write the table to `out`, or as CSV with the manifest header to stdout."""
    stream = stream or sys.stdout
    if out:
        ReportHandler().save_table(frame, out, manifest, summary)
    else:
        stream.write("\n".join(manifest.header_lines()) + "\n")
        frame.to_csv(stream, index=False, lineterminator="\n")
    if summary:
        width = max(len(k) for k in summary)
        for k, v in summary.items():
            print(f"{k:<{width}}  {v}", file=sys.stderr if not out else sys.stdout)


def _pgm_files(folder):
    files = sorted(glob.glob(os.path.join(folder, "*.pgm")))
    if not files:
        raise InputError(f"no .pgm files in {folder}")
    return files


# ─── detect ────────────────────────────────────────────────────────────────
def cmd_detect(args):
    cascade = load_cascade(args.cascade)
    manifest = _manifest(args, "detect").add_input("cascade", args.cascade)
    cfg = PyramidConfig(args.factor, args.scales, args.max_size)
    budget = ScratchBudget(args.budget, AccountingMode(args.accounting), args.reserved,
                           max(cascade.window_w, cascade.window_h))
    frames = []
    for path in args.images:
        manifest.add_input(os.path.basename(path), path)
        img = read_pgm(path)
        dets = detect(img, cascade, cfg, budget, args.overlap, args.step, args.workers, args.group_iou)
        image_id = os.path.splitext(os.path.basename(path))[0]
        frames.append(detections_frame(image_id, dets))
    frame = frames[0] if len(frames) == 1 else pd.concat(frames, ignore_index=True)
    summary = {"images": len(args.images), "detections": len(frame)}
    _emit(frame, args.out, manifest, summary)
    return EXIT_OK


# ─── train ─────────────────────────────────────────────────────────────────
def cmd_train(args):
    positives = [read_pgm(p) for p in _pgm_files(args.pos_dir)]
    negatives = [read_pgm(p) for p in _pgm_files(args.neg_dir)]
    cfg = TrainConfig(
        num_stages=args.stages, min_detection_rate=args.min_detection,
        max_false_positive_rate=args.max_fp, max_weak_per_stage=args.max_weak,
        feature_fraction=args.feature_fraction, seed=args.seed, window=args.window,
        min_feature_size=args.min_feature_size, feature_stride=args.feature_stride,
        variance_normalization=not args.no_normalize, negatives_per_stage=args.negatives,
        workers=args.workers)
    result = train_cascade(positives, negatives, cfg)
    save_cascade(result.cascade, args.out)

    manifest = _manifest(args, "train", seed=args.seed)
    summary = {"cascade": args.out, "stages": len(result.cascade.stages),
               "weak_classifiers": result.cascade.weak_count, "size_bytes": result.cascade.size(),
               "stopped_early": result.stopped_early}
    _emit(train_log_frame(result.log), args.log, manifest, summary)
    return EXIT_OK


# ─── eval ──────────────────────────────────────────────────────────────────
def cmd_eval(args):
    preds = load_predictions(args.predictions)
    gts = load_ground_truth(args.ground_truth)
    report = evaluate(preds, gts, args.iou)
    manifest = _manifest(args, "eval").add_input("predictions", args.predictions) \
        .add_input("ground_truth", args.ground_truth)
    frame = pd.DataFrame([report.summary()])
    _emit(frame, args.out, manifest)
    return EXIT_OK


# ─── cnn ───────────────────────────────────────────────────────────────────
def _parse_budget_pair(text, engine, overlap):
    try:
        l1, l2 = (int(float(v)) for v in text.split("/"))
    except ValueError:
        raise InputError(f"budget '{text}' is not L1/L2 in bytes") from None
    return BudgetConfig(l1, l2, engine, overlap)


def cmd_cnn(args):
    graph_path = args.graph or config.get_graph_path()
    graph = load_graph(graph_path)
    platform = resolve_platform(args.platform)
    engine = None if args.engine == "auto" else EngineKind(args.engine)
    overlap = {"platform": None, "on": True, "off": False}[args.dma_overlap]
    manifest = _manifest(args, "cnn").add_input("graph", graph_path)

    if args.compare_budgets:
        budgets = [_parse_budget_pair(t, engine, overlap) for t in args.compare_budgets.split(",")]
        comparison = compare_budgets(graph, platform, budgets)
        summary = {"speedup": comparison.speedup, "monotone": comparison.monotone,
                   "resident_mac_per_cycle_gain": comparison.resident_mac_gain()}
        _emit(comparison_frame(comparison), args.out, manifest, summary)
        if args.plot:
            import plots
            plots.plot_budget_comparison(comparison, args.plot)
        return EXIT_OK

    budget = BudgetConfig(args.l1, args.l2, engine, overlap)
    schedule, report = schedule_and_estimate(graph, platform, budget)
    summary = {"graph": graph.name, "params": count_params_total(graph),
               "macs": count_macs_total(graph), **report.summary()}
    _emit(schedule_frame(schedule, report), args.out, manifest, summary)
    if args.summary:
        ReportHandler().save_summary(summary, args.summary, manifest)
    if args.plot:
        import plots
        plots.plot_layer_latency(report, args.plot)
    return EXIT_OK


# ─── power ─────────────────────────────────────────────────────────────────
def _scenario_with_overrides(args):
    s = power.resolve_scenario(args.scenario)
    phase, duty, battery = s.phase, s.duty, s.battery
    if args.compute_mj is not None:
        phase = replace(phase, compute_mj=args.compute_mj)
    if args.overhead_mj is not None:
        phase = replace(phase, wake_overhead_mj=args.overhead_mj)
    if args.period is not None:
        duty = replace(duty, wake_period_s=args.period)
    if args.policy is not None:
        duty = replace(duty, payload_policy=power.PayloadPolicy(args.policy))
    if args.sleep_uw is not None:
        duty = replace(duty, sleep_power_uw=args.sleep_uw)
    if args.active_s is not None:
        duty = replace(duty, active_s=args.active_s)
    if args.detections is not None:
        duty = replace(duty, detections_per_day=args.detections)
    if args.capacity_mah is not None:
        battery = replace(battery, capacity_mah=args.capacity_mah)
    return power.Scenario(s.name, phase, duty, battery)


def cmd_power(args):
    manifest = _manifest(args, "power")
    if args.table:
        names = power.SHIPPED_SCENARIOS if args.all else power.SHIPPED_SCENARIOS[:4]
        table = power.energy_table([power.resolve_scenario(n) for n in names])
        _emit(table, args.out, manifest)
        if args.plot:
            import plots
            plots.plot_energy_table(table, args.plot)
        return EXIT_OK

    scenario = _scenario_with_overrides(args)
    ledger = scenario.ledger()
    life = power.lifetime(scenario.battery, ledger.daily_j)
    summary = {"scenario": scenario.name, "policy": scenario.duty.payload_policy.value,
               "wake_period_s": scenario.duty.wake_period_s, "daily_j": ledger.daily_j,
               "battery_j": scenario.battery.energy_j, "lifetime_days": life.days,
               "lifetime_exact_days": life.exact_days}

    if args.simulate or args.uniform is not None:
        if args.simulate:
            trace = power.load_trace(args.simulate)
            manifest.add_input("trace", args.simulate)
        else:
            trace = power.uniform_trace(args.uniform, args.days)
        result = power.simulate(scenario.phase, scenario.duty, scenario.battery, trace, args.days)
        summary.update({f"sim_{k}": v for k, v in result.ledger.summary().items()})
        summary["sim_detections"] = result.detections
        summary["sim_exhausted_day"] = (result.exhausted_at_s / config.SECONDS_PER_DAY
                                        if result.exhausted else "")
        if args.timeline:
            ReportHandler().save_table(result.timeline_frame(), args.timeline, manifest)
        if args.plot:
            import plots
            plots.plot_battery(result, scenario.battery.energy_j, args.plot)

    _emit(ledger_frame(ledger), args.out, manifest, summary)
    return EXIT_OK


# ─── synth ─────────────────────────────────────────────────────────────────
def cmd_synth(args):
    gt = synth.write_corpus(args.out_dir, args.positives, args.negatives, args.scenes, args.seed)
    print(gt)
    return EXIT_OK


# ─── parser ────────────────────────────────────────────────────────────────
def build_parser():
    parser = argparse.ArgumentParser(
        prog="pest-monitor",
        description="Pest-trap detection, CNN scheduling and energy budgeting tools")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug logging")
    parser.add_argument("--version", action="version", version=config.TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run a cascade over PGM images")
    p.add_argument("images", nargs="+")
    p.add_argument("--cascade", required=True)
    p.add_argument("--scales", type=int, default=config.PYRAMID_LEVELS)
    p.add_argument("--factor", type=float, default=config.PYRAMID_SCALE_FACTOR)
    p.add_argument("--max-size", type=int, default=config.MAX_DETECTION_PX)
    p.add_argument("--overlap", type=int, default=config.TILE_OVERLAP)
    p.add_argument("--budget", type=int, default=config.SCRATCH_BUDGET_BYTES)
    p.add_argument("--reserved", type=int, default=config.CASCADE_RESIDENT_BYTES)
    p.add_argument("--accounting", choices=[m.value for m in AccountingMode],
                   default=AccountingMode.II_ONLY.value)
    p.add_argument("--step", type=int, default=config.SCAN_STEP)
    p.add_argument("--workers", type=int, default=config.DETECT_WORKERS)
    p.add_argument("--group-iou", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train", help="train a cascade from positive windows and negative images")
    p.add_argument("pos_dir")
    p.add_argument("neg_dir")
    p.add_argument("--out", default="cascade.json")
    p.add_argument("--log")
    p.add_argument("--stages", type=int, default=config.TRAIN_STAGES)
    p.add_argument("--min-detection", type=float, default=config.TRAIN_MIN_DETECTION_RATE)
    p.add_argument("--max-fp", type=float, default=config.TRAIN_MAX_FALSE_POSITIVE_RATE)
    p.add_argument("--max-weak", type=int, default=config.TRAIN_MAX_WEAK_PER_STAGE)
    p.add_argument("--feature-fraction", type=float, default=config.TRAIN_FEATURE_FRACTION)
    p.add_argument("--feature-stride", type=int, default=1)
    p.add_argument("--min-feature-size", type=int, default=1)
    p.add_argument("--window", type=int, default=config.WINDOW_SIZE)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--seed", type=int, default=config.TRAIN_SEED)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="match predicted boxes against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--iou", type=float, default=config.EVAL_IOU_THRESHOLD)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cnn", help="place and cost a CNN on a platform")
    p.add_argument("--graph", help="graph JSON (default: shipped MobileNetV3-SSDLite)")
    p.add_argument("--platform", default=os.getenv("PEST_PLATFORM", config.DEFAULT_PLATFORM))
    p.add_argument("--l1", type=int, default=config.CNN_L1_BYTES)
    p.add_argument("--l2", type=int, default=config.CNN_L2_BYTES)
    p.add_argument("--engine", choices=["auto"] + [k.value for k in EngineKind], default="auto")
    p.add_argument("--dma-overlap", choices=["platform", "on", "off"], default="off")
    p.add_argument("--compare-budgets", metavar="L1/L2,L1/L2,...")
    p.add_argument("--out")
    p.add_argument("--summary")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_cnn)

    p = sub.add_parser("power", help="daily energy, lifetime and wake/sleep simulation")
    p.add_argument("--scenario", default=config.DEFAULT_SCENARIO)
    p.add_argument("--table", action="store_true", help="energy table of the shipped GAP9 scenarios")
    p.add_argument("--all", action="store_true", help="with --table, include the GAP8 scenarios")
    p.add_argument("--policy", choices=[pp.value for pp in power.PayloadPolicy])
    p.add_argument("--period", type=float)
    p.add_argument("--compute-mj", type=float)
    p.add_argument("--overhead-mj", type=float)
    p.add_argument("--sleep-uw", type=float)
    p.add_argument("--active-s", type=float)
    p.add_argument("--detections", type=float)
    p.add_argument("--capacity-mah", type=float)
    p.add_argument("--simulate", metavar="TRACE", help="arrival trace, one timestamp per line")
    p.add_argument("--uniform", type=float, metavar="PER_DAY",
                   help="simulate with evenly spaced arrivals instead of a trace")
    p.add_argument("--days", type=float, default=30.0)
    p.add_argument("--timeline")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("synth", help="write a synthetic training and test corpus")
    p.add_argument("out_dir")
    p.add_argument("--positives", type=int, default=1000)
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--seed", type=int, default=config.TRAIN_SEED)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: None, 1: "INFO"}.get(args.verbose, "DEBUG")
    config.setup_logging(level)
    try:
        return args.func(args)
    except InputError as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except ConstraintError as e:
        logger.error("%s", e)
        return EXIT_CONSTRAINT
    except PestKitError as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except OSError as e:
        logger.error("%s: %s", getattr(e, "filename", "") or "i/o error", e.strerror or e)
        return EXIT_INPUT
