"""Command-line entry point: ``ptdp estimate|simulate|plan|sweep|render``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .costs import TaskDurations, memory_footprint, pp_p2p_volume
from .hardware import INTER_NODE, INTRA_NODE, HardwareSpec, MappingError, default_mapping, preset
from .model import (
    SECONDS_PER_DAY,
    ModelSpec,
    TrainingJob,
    flops_breakdown,
    flops_per_iteration,
    param_count,
    training_time_estimate,
)
from .parallel import ConfigError, ParallelConfig, violations
from .planner import (
    DEFAULT_OVERHEAD,
    DEFAULT_TOP_K,
    EmptyPlanError,
    PlanQuery,
    best_point,
    batch_sweep,
    effective_durations,
    iteration_breakdown,
    microbatch_sweep,
    p2p_hop_time,
    plan,
)
from .render import render_svg
from .schedule import (
    ScheduleError,
    Timeline,
    bubble_fraction,
    build_schedule,
    peak_inflight,
    simulate,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_PLAN = 3


class UsageError(Exception):
    pass


def fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        return f"{value:.6g}"
    return str(value)


def _color(stream) -> bool:
    return not os.environ.get("PTDP_NO_COLOR") and hasattr(stream, "isatty") and stream.isatty()


def _bold(text: str, on: bool) -> str:
    return f"\033[1m{text}\033[0m" if on else text


def table(headers: list[str], rows: list[list], color: bool = False, highlight: int | None = None) -> str:
    cells = [[fmt(c) for c in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    lines = [_bold("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(), color)]
    for i, row in enumerate(cells):
        line = "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
        lines.append(_bold(line, color and i == highlight))
    return "\n".join(lines) + "\n"


def csv_text(headers: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows([[fmt(c) for c in row] for row in rows])
    return buf.getvalue()


def _json_default(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return float(obj)


def dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


# ---- input loading ----


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    try:
        with open(p) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from None


def load_model(path: str | None, required: bool = True) -> ModelSpec | None:
    if path is None:
        if required:
            raise UsageError("--model FILE is required")
        return None
    try:
        return ModelSpec.from_dict(_load_json(path, "model"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"invalid model file {path}: {exc}") from None


def load_hardware(args) -> HardwareSpec:
    if getattr(args, "hardware", None):
        try:
            return HardwareSpec.from_dict(_load_json(args.hardware, "hardware"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, UsageError):
                raise
            raise UsageError(f"invalid hardware file {args.hardware}: {exc}") from None
    return preset(args.preset)


def parallel_config(args) -> ParallelConfig:
    return ParallelConfig(
        pipeline_size=args.p,
        tensor_size=args.t,
        data_size=args.d,
        microbatch_size=args.b,
        chunks=args.v,
        schedule=args.schedule,
        scatter_gather=args.scatter_gather,
        activation_recompute=args.recompute,
    )


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("candidate list is empty")
    if min(values) < 1:
        raise argparse.ArgumentTypeError("candidates must be positive")
    return values


def _emit(args, text: str, name: str | None = None) -> None:
    sys.stdout.write(text)
    if name and args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


# ---- subcommands ----


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    params = args.params if args.params is not None else param_count(model)
    report: dict = {"model": model.to_dict(), "parameters": params}
    if args.batch is not None:
        br = flops_breakdown(model, args.batch, args.recompute)
        report["global_batch"] = args.batch
        report["flops_per_iteration"] = flops_per_iteration(model, args.batch, args.recompute)
        report["flops_breakdown"] = {
            "qkv_transform": br.qkv_transform * br.layer_factor * br.layers,
            "attention_matrix": br.attention_matrix * br.layer_factor * br.layers,
            "attention_over_values": br.attention_over_values * br.layer_factor * br.layers,
            "post_attention_projection": br.post_attention_projection * br.layer_factor * br.layers,
            "feed_forward": br.feed_forward * br.layer_factor * br.layers,
            "logit_layer": br.logit_layer,
        }
        config = parallel_config(args)
        found = violations(config, model, TrainingJob(args.batch))
        if found:
            raise ConfigError([msg for _, msg in found])
        hw = load_hardware(args)
        est = iteration_breakdown(
            config, model, TrainingJob(args.batch), hw, overhead=args.overhead, zero_comm=args.zero_comm
        )
        report["config"] = config.to_dict()
        report["iteration_seconds"] = est.seconds
        report["iteration_parts"] = {
            "pipeline": est.pipeline,
            "p2p": est.p2p,
            "data_parallel": est.data_parallel,
        }
        report["tflops_per_device"] = report["flops_per_iteration"] / (config.devices * est.seconds) / 1e12
    if args.tokens is not None and args.gpus is not None and args.throughput is not None:
        seconds = training_time_estimate(params, args.tokens, args.gpus, args.throughput)
        report["training_seconds"] = seconds
        report["training_days"] = seconds / SECONDS_PER_DAY

    if args.format == "json":
        _emit(args, dump_json(report), "estimate.json")
        return EXIT_OK
    rows = [["parameters", params]]
    if "flops_per_iteration" in report:
        rows.append([f"flops per iteration (B={args.batch})", report["flops_per_iteration"]])
        rows += [[f"  {k}", v] for k, v in report["flops_breakdown"].items()]
        rows.append([f"iteration seconds ({parallel_config(args).label()})", report["iteration_seconds"]])
        rows += [[f"  {k}", v] for k, v in report["iteration_parts"].items()]
        rows.append(["TFLOP/s per device", report["tflops_per_device"]])
    if "training_days" in report:
        rows.append(["training time (days)", report["training_days"]])
    if args.format == "csv":
        _emit(args, csv_text(["quantity", "value"], rows), "estimate.csv")
    else:
        text = table(["quantity", "value"], rows, _color(sys.stdout))
        if "training_days" in report:
            text += f"training takes about {report['training_days']:.0f} days\n"
        _emit(args, text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = load_model(args.model, required=False)
    config = parallel_config(args)
    if args.microbatches is not None:
        m = args.microbatches
    elif args.batch is not None:
        per = config.data_size * config.microbatch_size
        if args.batch % per:
            raise ConfigError([f"global batch {args.batch} is not divisible by d*b = {per}"])
        m = args.batch // per
    else:
        raise UsageError("give --microbatches or --batch")
    if model is not None:
        found = violations(config, model, TrainingJob(m * config.data_size * config.microbatch_size))
        if found:
            raise ConfigError([msg for _, msg in found])
    schedule = build_schedule(config.schedule, config.pipeline_size, m, config.chunks)
    hw = load_hardware(args)
    comm = {}
    if model is None:
        durations = TaskDurations(args.tf, args.tb)
        timeline = simulate(schedule, durations)
    else:
        mapping = None if args.zero_comm else default_mapping(
            config.pipeline_size, config.tensor_size, config.data_size, hw, allow_cross_node_tensor=True
        )
        durations = effective_durations(model, config, hw, mapping, args.overhead, args.zero_comm)
        if args.zero_comm or config.pipeline_size == 1:
            timeline = simulate(schedule, durations)
        else:
            per_rank = pp_p2p_volume(
                config.microbatch_size,
                model.sequence_length,
                model.hidden_size,
                config.tensor_size,
                config.scatter_gather,
            )
            timeline = simulate(
                schedule,
                durations,
                p2p_bytes=float(per_rank),
                hardware=hw,
                mapping=mapping,
                transfer_time=lambda cls: p2p_hop_time(model, config, hw, cls),
            )
    for tr in timeline.transfers:
        comm[tr.link_class] = comm.get(tr.link_class, 0.0) + tr.nbytes
    peaks = peak_inflight(timeline)
    report = {
        "schedule": config.schedule,
        "pipeline_size": config.pipeline_size,
        "microbatches": m,
        "chunks": config.chunks,
        "t_f": durations.t_f,
        "t_b": durations.t_b,
        "span": float(timeline.span),
        "bubble": float(bubble_fraction(timeline)),
        "peak_inflight": max(peaks),
        "peak_inflight_per_device": list(peaks),
        "comm_bytes": {INTRA_NODE: comm.get(INTRA_NODE, 0.0), INTER_NODE: comm.get(INTER_NODE, 0.0)},
    }
    if model is not None:
        mem = memory_footprint(model, config, m, capacity=hw.memory_bytes)
        report["memory_gb"] = mem.total_bytes / 1e9
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timeline.save(out / "timeline.json")
    if args.svg:
        (out / "timeline.svg").write_text(render_svg(timeline, config.label()))

    if args.format == "json":
        sys.stdout.write(dump_json(report))
        return EXIT_OK
    rows = [
        ["schedule", config.label() + f" m={m}"],
        ["span (s)", report["span"]],
        ["bubble fraction", report["bubble"]],
        ["peak in-flight", report["peak_inflight"]],
        ["intra-node bytes", report["comm_bytes"][INTRA_NODE]],
        ["inter-node bytes", report["comm_bytes"][INTER_NODE]],
    ]
    if "memory_gb" in report:
        rows.append(["memory (GB)", report["memory_gb"]])
    if args.format == "csv":
        sys.stdout.write(csv_text(["quantity", "value"], rows))
    else:
        sys.stdout.write(table(["quantity", "value"], rows, _color(sys.stdout)))
    return EXIT_OK


PLAN_HEADERS = [
    "rank", "p", "t", "d", "b", "v", "schedule", "recompute",
    "seconds", "TFLOP/s", "bubble", "memory_GB", "reasons",
]


def cmd_plan(args) -> int:
    data = _load_json(args.query, "plan query")
    try:
        query = PlanQuery.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid plan query {args.query}: {exc}") from None
    overrides = {}
    if args.hardware or args.preset_given:
        overrides["hardware"] = load_hardware(args)
    if args.allow_cross_node_tensor:
        overrides["allow_cross_node_tensor"] = True
    if overrides:
        query = PlanQuery(**{**query.__dict__, **overrides})
    try:
        results = plan(query, explain=args.explain, simulate_top=args.simulate_top if args.simulate else 0)
    except EmptyPlanError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NO_PLAN
    feasible = [r for r in results if r.feasible][: args.top]
    shown = feasible + ([r for r in results if not r.feasible] if args.explain else [])
    if args.format == "json":
        _emit(args, dump_json([r.to_dict() for r in shown]), "plan.json")
        return EXIT_OK
    rows = []
    for i, r in enumerate(shown):
        c = r.config
        rows.append([
            i + 1 if r.feasible else "-",
            c.pipeline_size, c.tensor_size, c.data_size, c.microbatch_size, c.chunks,
            c.schedule, c.activation_recompute,
            r.seconds,
            None if r.flops_per_device is None else r.flops_per_device / 1e12,
            None if r.bubble is None else float(r.bubble),
            None if r.memory is None else r.memory.total_bytes / 1e9,
            "; ".join(r.reasons) or "",
        ])
    if args.format == "csv":
        _emit(args, csv_text(PLAN_HEADERS, rows), "plan.csv")
    else:
        _emit(args, table(PLAN_HEADERS, rows, _color(sys.stdout), highlight=0))
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    config = parallel_config(args)
    hw = load_hardware(args)
    if (args.b_list is None) == (args.batch_list is None):
        raise UsageError("give exactly one of --b-list or --batch-list")
    if args.b_list is not None:
        if args.batch is None:
            raise UsageError("--b-list needs --batch")
        points = microbatch_sweep(
            config, model, TrainingJob(args.batch), hw, args.b_list, args.overhead, args.zero_comm
        )
        axis = "b"
    else:
        points = batch_sweep(config, model, args.batch_list, hw, args.overhead, args.zero_comm)
        axis = "B"
    best = best_point(points)
    headers = [axis, "seconds", "samples_per_s", "TFLOP/s", "best", "skipped"]
    rows = [
        [
            pt.x,
            pt.seconds,
            pt.samples_per_second,
            None if pt.flops_per_device is None else pt.flops_per_device / 1e12,
            "*" if pt is best else "",
            pt.reason,
        ]
        for pt in points
    ]
    if args.format == "json":
        data = {
            "axis": axis,
            "config": config.to_dict(),
            "points": [dict(zip(headers[:4] + ["reason"], [r[0], pt.seconds, pt.samples_per_second, r[3], pt.reason])) for r, pt in zip(rows, points)],
            "argmax": None if best is None else best.x,
        }
        _emit(args, dump_json(data), "sweep.json")
    elif args.format == "table":
        idx = points.index(best) if best is not None else None
        _emit(args, table(headers, rows, _color(sys.stdout), highlight=idx))
    else:
        _emit(args, csv_text(headers, rows), "sweep.csv")
    return EXIT_OK


def cmd_render(args) -> int:
    path = Path(args.timeline)
    if not path.is_file():
        raise UsageError(f"timeline file not found: {args.timeline}")
    timeline = Timeline.load(path)
    target = Path(args.output) if args.output else path.with_suffix(".svg")
    target.write_text(render_svg(timeline))
    sys.stdout.write(f"wrote {target}\n")
    return EXIT_OK


# ---- parser ----


def _common(sub: argparse.ArgumentParser, default_format: str = "table") -> None:
    sub.add_argument("--model", help="model description JSON")
    hw = sub.add_mutually_exclusive_group()
    hw.add_argument("--hardware", help="hardware description JSON")
    hw.add_argument("--preset", default=None, help="named hardware preset (default selene)")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--format", choices=("table", "json", "csv"), default=default_format)
    sub.add_argument("--svg", action="store_true", help="also write an SVG Gantt chart")


def _parallel(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--p", type=int, default=1, help="pipeline-parallel size")
    sub.add_argument("--t", type=int, default=1, help="tensor-parallel size")
    sub.add_argument("--d", type=int, default=1, help="data-parallel size")
    sub.add_argument("--b", type=int, default=1, help="microbatch size")
    sub.add_argument("--v", type=int, default=1, help="model chunks per device")
    sub.add_argument("--schedule", choices=("gpipe", "1f1b", "interleaved"), default="1f1b")
    sub.add_argument("--scatter-gather", action=argparse.BooleanOptionalAction, default=False)
    sub.add_argument("--recompute", action=argparse.BooleanOptionalAction, default=True)
    sub.add_argument("--zero-comm", action="store_true", help="price all communication at zero")
    sub.add_argument("--overhead", type=float, default=DEFAULT_OVERHEAD, help="seconds per chunk pass")
    sub.add_argument("--batch", type=int, default=None, help="global batch size B")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptdp", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    est = subs.add_parser("estimate", help="parameters, FLOPs, iteration and training time")
    _common(est)
    _parallel(est)
    est.add_argument("--params", type=float, default=None, help="override the parameter count")
    est.add_argument("--tokens", type=float, default=None, help="training tokens T")
    est.add_argument("--gpus", type=int, default=None, help="device count n")
    est.add_argument("--throughput", type=float, default=None, help="achieved FLOP/s per device X")
    est.set_defaults(func=cmd_estimate)

    sim = subs.add_parser("simulate", help="simulate one pipeline schedule")
    _common(sim)
    _parallel(sim)
    sim.add_argument("--microbatches", "-m", type=int, default=None)
    sim.add_argument("--tf", type=float, default=1.0, help="forward seconds when no model is given")
    sim.add_argument("--tb", type=float, default=2.0, help="backward seconds when no model is given")
    sim.set_defaults(func=cmd_simulate)

    pl = subs.add_parser("plan", help="rank parallel configurations for a query")
    pl.add_argument("query", help="plan query JSON")
    _common(pl)
    pl.add_argument("--top", type=int, default=DEFAULT_TOP_K)
    pl.add_argument("--explain", action="store_true", help="list infeasible configs with reasons")
    pl.add_argument("--simulate", action="store_true", help="re-rank the top candidates by simulation")
    pl.add_argument("--simulate-top", type=int, default=DEFAULT_TOP_K)
    pl.add_argument("--allow-cross-node-tensor", action="store_true")
    pl.set_defaults(func=cmd_plan)

    sw = subs.add_parser("sweep", help="throughput over microbatch or batch sizes")
    _common(sw, default_format="csv")
    _parallel(sw)
    sw.add_argument("--b-list", type=_int_list, default=None)
    sw.add_argument("--batch-list", type=_int_list, default=None)
    sw.set_defaults(func=cmd_sweep)

    rd = subs.add_parser("render", help="draw a saved timeline as SVG")
    rd.add_argument("timeline")
    rd.add_argument("--output", "-o", default=None)
    rd.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "preset"):
        args.preset_given = args.preset is not None
        args.preset = args.preset or "selene"
    if getattr(args, "out", None) is None and args.command == "simulate":
        args.out = "."
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (ConfigError, ScheduleError, MappingError, ValueError) as exc:  # all ValueErrors, listed for readers
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
