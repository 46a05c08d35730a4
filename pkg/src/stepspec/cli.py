"""Operator entry point: simulations, sweeps, calibration studies, live benchmarks.

One YAML config file describes a run; ``--set key.path=value`` overrides
win over file values.  Every run directory is self-describing: the
manifest carries the full config snapshot, so any report can be re-rendered
later with the ``report`` subcommand without re-simulating.

Exit codes: 0 success, 2 config error, 3 backend error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .backend import BackendError, EndpointConfig, RemoteModel
from .cascade import run_trace
from .core import ReasoningTrace, RunConfig, ValidationError
from .metrics import (
    CostLedger,
    CostModel,
    acceptance_rate,
    calibration_report,
    cascade_rate,
    merge_ledgers,
    speedup_estimate,
)
from .ngram_sd import LookupComposedOracle
from .oracle import Tier
from .simworld import (
    FIGURE_SHAPED_PRESETS,
    CalibrationProfile,
    ProfilePreset,
    SimWorld,
    SimWorldSpec,
    derive_seed,
    sample_calibration_records,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_RUNTIME = 4


class ConfigError(Exception):
    """Invalid configuration, with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ----------------------------------------------------------------------
# Config loading
# ----------------------------------------------------------------------


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(key, f"unparseable override value {raw!r}: {exc}") from exc
        _set_path(data, key.strip(), value)
    return data


def _set_path(data: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def _section(data: dict[str, Any], name: str, required: bool = True) -> dict[str, Any]:
    section = data.get(name)
    if section is None:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    if not isinstance(section, dict):
        raise ConfigError(name, "must be a mapping")
    return section


def parse_run_config(data: dict[str, Any]) -> RunConfig:
    section = _section(data, "run")
    try:
        return RunConfig.from_dict(section)
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        field = exc.args[0] if isinstance(exc, KeyError) else ""
        raise ConfigError(f"run.{field}" if field else "run", str(exc)) from exc


def parse_world_spec(data: dict[str, Any]) -> SimWorldSpec:
    section = _section(data, "world")
    try:
        return SimWorldSpec.from_dict(section)
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        field = exc.args[0] if isinstance(exc, KeyError) else ""
        raise ConfigError(f"world.{field}" if field else "world", str(exc)) from exc


def parse_cost_model(data: dict[str, Any]) -> CostModel:
    section = _section(data, "cost_model", required=False)
    try:
        return CostModel.from_dict(section) if section else CostModel()
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError("cost_model", str(exc)) from exc


@dataclass(frozen=True)
class PldConfig:
    enabled: bool = False
    n: int = 2
    max_draft: int = 8


def parse_pld(data: dict[str, Any]) -> PldConfig:
    section = _section(data, "pld", required=False)
    try:
        return PldConfig(
            enabled=bool(section.get("enabled", False)),
            n=int(section.get("n", 2)),
            max_draft=int(section.get("max_draft", 8)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("pld", str(exc)) from exc


@dataclass(frozen=True)
class GammaVariant:
    """One sweep point: a numeric threshold or the always-escalate mode."""

    label: str
    gamma: float
    always_escalate: bool


def parse_gamma_variants(data: dict[str, Any], base: RunConfig) -> list[GammaVariant]:
    sweep = _section(data, "sweep", required=False)
    raw = sweep.get("gammas")
    if raw is None:
        raw = ["always"] if base.always_escalate else [base.gamma]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("sweep.gammas", "must be a non-empty list")
    variants: list[GammaVariant] = []
    for item in raw:
        if isinstance(item, str):
            if item.lower() not in ("always", "always-escalate", "always_escalate"):
                raise ConfigError("sweep.gammas", f"unknown gamma literal {item!r}")
            variants.append(GammaVariant(label="always", gamma=1.0, always_escalate=True))
        else:
            try:
                value = float(item)
            except (TypeError, ValueError) as exc:
                raise ConfigError("sweep.gammas", f"not a number: {item!r}") from exc
            if not 0.0 <= value <= 1.0:
                raise ConfigError("sweep.gammas", f"gamma {value} outside [0, 1]")
            variants.append(GammaVariant(label=f"{value:g}", gamma=value, always_escalate=False))
    return variants


def _int_list(sweep: dict[str, Any], key: str, default: int) -> list[int]:
    raw = sweep.get(key)
    if raw is None:
        return [default]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"sweep.{key}", "must be a non-empty list")
    try:
        return [int(x) for x in raw]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep.{key}", str(exc)) from exc


# ----------------------------------------------------------------------
# Simulation runs
# ----------------------------------------------------------------------


@dataclass
class TraceOutcome:
    ledger: CostLedger
    answer_correct: bool
    steps: int
    termination: str
    trace: ReasoningTrace


def simulate_one_trace(
    world_spec: SimWorldSpec,
    run_config: RunConfig,
    pld: PldConfig,
    trace_seed: int,
) -> TraceOutcome:
    world = SimWorld(replace(world_spec, seed=trace_seed))
    draft = world.draft_model()
    target = world.target_model()
    if pld.enabled:
        target = LookupComposedOracle(target, n=pld.n, max_draft=pld.max_draft)
    config = replace(run_config, seed=trace_seed, answer_marker=world.answer_marker)
    trace = run_trace(world.prompt_text, config, draft, target)
    return TraceOutcome(
        ledger=trace.ledger,
        answer_correct=world.trace_answer_correct(trace.final_answer),
        steps=len(trace.context.accepted_steps),
        termination=trace.termination.value,
        trace=trace,
    )


@dataclass
class VariantResult:
    label: dict[str, Any]
    outcomes: list[TraceOutcome]

    @property
    def merged_ledger(self) -> CostLedger:
        return merge_ledgers(outcome.ledger for outcome in self.outcomes)

    def summary_row(self, cost_model: CostModel) -> dict[str, Any]:
        ledger = self.merged_ledger
        n = len(self.outcomes)
        row: dict[str, Any] = dict(self.label)
        row["traces"] = n
        row["accuracy"] = sum(1 for o in self.outcomes if o.answer_correct) / n
        row["cascade_rate"] = cascade_rate(ledger) if ledger.draft_verify_calls else None
        row["acceptance_rate"] = acceptance_rate(ledger) if ledger.draft_verify_calls else None
        row["speedup"] = speedup_estimate(ledger, cost_model)
        gen_calls = ledger.target_gen_calls + ledger.fallback_gen_calls
        gen_tokens = ledger.target_gen_tokens + ledger.fallback_gen_tokens
        row["tokens_per_target_call"] = gen_tokens / gen_calls if gen_calls else None
        row["mean_steps"] = sum(o.steps for o in self.outcomes) / n
        for key, value in ledger.to_dict().items():
            row[key] = value
        return row


def run_simulation_sweep(
    data: dict[str, Any], workers: int
) -> tuple[list[dict[str, Any]], list[VariantResult], CostModel]:
    run_config = parse_run_config(data)
    world_spec = parse_world_spec(data)
    cost_model = parse_cost_model(data)
    pld = parse_pld(data)
    sweep = _section(data, "sweep", required=False)
    traces = int(sweep.get("traces", 100))
    if traces < 1:
        raise ConfigError("sweep.traces", "must be >= 1")
    gamma_variants = parse_gamma_variants(data, run_config)
    k_values = _int_list(sweep, "draft_steps", run_config.draft_steps)
    w_values = _int_list(sweep, "tree_widths", run_config.tree_width)

    rows: list[dict[str, Any]] = []
    results: list[VariantResult] = []
    for gv in gamma_variants:
        for k in k_values:
            for w in w_values:
                variant_config = replace(
                    run_config,
                    gamma=gv.gamma,
                    always_escalate=gv.always_escalate,
                    draft_steps=k,
                    tree_width=w,
                )
                seeds = [derive_seed(run_config.seed, i) for i in range(traces)]
                if workers > 1:
                    with ThreadPoolExecutor(max_workers=workers) as pool:
                        outcomes = list(
                            pool.map(
                                lambda s: simulate_one_trace(world_spec, variant_config, pld, s),
                                seeds,
                            )
                        )
                else:
                    outcomes = [
                        simulate_one_trace(world_spec, variant_config, pld, s) for s in seeds
                    ]
                result = VariantResult(
                    label={"gamma": gv.label, "draft_steps": k, "tree_width": w},
                    outcomes=outcomes,
                )
                results.append(result)
                rows.append(result.summary_row(cost_model))
    return rows, results, cost_model


# ----------------------------------------------------------------------
# Report writing
# ----------------------------------------------------------------------


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.6f}"
    if value is None:
        return ""
    return value


def rows_to_csv(rows: list[dict[str, Any]]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0].keys())
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in header])
    return buf.getvalue()


def _json_dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def compute_run_id(snapshot: dict[str, Any]) -> str:
    canonical = json.dumps(snapshot, sort_keys=True).encode("utf-8")
    return hashlib.blake2b(canonical, digest_size=6).hexdigest()


def write_run_outputs(
    out_dir: Path,
    mode: str,
    snapshot: dict[str, Any],
    rows: list[dict[str, Any]],
    results: list[VariantResult] | None,
    started: float,
) -> Path:
    run_id = compute_run_id(snapshot)
    run_dir = out_dir / f"{mode}-{run_id}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "summary.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (run_dir / "summary.json").write_text(
        _json_dump({"schema_version": 1, "config": snapshot, "rows": rows}),
        encoding="utf-8",
    )
    trace_paths: list[str] = []
    if results is not None:
        traces_dir = run_dir / "traces"
        traces_dir.mkdir(exist_ok=True)
        for vi, result in enumerate(results):
            for ti, outcome in enumerate(result.outcomes):
                doc = outcome.trace.to_dict()
                doc["meta"] = {
                    "variant": result.label,
                    "trace_index": ti,
                    "answer_correct": outcome.answer_correct,
                }
                path = traces_dir / f"variant{vi:02d}_trace{ti:04d}.json"
                path.write_text(_json_dump(doc), encoding="utf-8")
                trace_paths.append(str(path.relative_to(run_dir)))
    manifest = {
        "schema_version": 1,
        "run_id": run_id,
        "mode": mode,
        "tool_version": __version__,
        "config": snapshot,
        "outputs": {
            "summary_csv": "summary.csv",
            "summary_json": "summary.json",
            "traces": trace_paths,
        },
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    (run_dir / "manifest.json").write_text(_json_dump(manifest), encoding="utf-8")
    return run_dir


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.time()
    data = load_config(args.config, args.set or [])
    if args.seed is not None:
        _set_path(data, "run.seed", args.seed)
    rows, results, _ = run_simulation_sweep(data, args.workers)
    keep_traces = bool(_section(data, "sweep", required=False).get("keep_traces", True))
    run_dir = write_run_outputs(
        Path(args.out_dir),
        "simulate",
        data,
        rows,
        results if keep_traces else None,
        started,
    )
    print(f"wrote {run_dir}")
    for row in rows:
        print(
            f"gamma={row['gamma']} k={row['draft_steps']} W={row['tree_width']} "
            f"accuracy={row['accuracy']:.4f} alpha={row['cascade_rate']:.4f} "
            f"speedup={row['speedup']:.3f}"
        )
    return EXIT_OK


def _named_presets(data: dict[str, Any]) -> dict[str, ProfilePreset]:
    section = _section(data, "calibrate", required=False)
    raw = section.get("profiles")
    if raw is None:
        return dict(FIGURE_SHAPED_PRESETS)
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("calibrate.profiles", "must be a non-empty mapping")
    presets: dict[str, ProfilePreset] = {}
    for name, value in raw.items():
        if value == "preset":
            if name not in FIGURE_SHAPED_PRESETS:
                raise ConfigError(
                    f"calibrate.profiles.{name}",
                    f"no built-in preset; available: {sorted(FIGURE_SHAPED_PRESETS)}",
                )
            presets[name] = FIGURE_SHAPED_PRESETS[name]
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"calibrate.profiles.{name}", "must be a mapping or 'preset'")
        try:
            profile = CalibrationProfile.from_dict(value.get("profile", value))
            mix = float(value.get("difficulty_mix", 0.3))
        except (ValidationError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"calibrate.profiles.{name}", str(exc)) from exc
        presets[name] = ProfilePreset(profile=profile, difficulty_mix=mix)
    return presets


def cmd_calibrate(args: argparse.Namespace) -> int:
    started = time.time()
    data = load_config(args.config, args.set or [])
    if args.seed is not None:
        _set_path(data, "run.seed", args.seed)
    section = _section(data, "calibrate", required=False)
    samples = int(section.get("samples", 100_000))
    gamma = float(section.get("gamma", 0.9))
    seed = int(_section(data, "run", required=False).get("seed", 0))
    presets = _named_presets(data)

    rows: list[dict[str, Any]] = []
    reports: dict[str, dict[str, Any]] = {}
    for name in sorted(presets):
        preset = presets[name]
        records = sample_calibration_records(
            preset.profile, preset.difficulty_mix, samples, derive_seed(seed, name)
        )
        report = calibration_report(records, gamma)
        reports[name] = report.to_dict()
        rows.append(
            {
                "profile": name,
                "overall_accuracy": report.overall_accuracy,
                "hiconf_accuracy": report.hiconf_accuracy,
                "coverage": report.coverage,
                "gamma": gamma,
                "n": report.n,
            }
        )
    run_dir = write_run_outputs(Path(args.out_dir), "calibrate", data, rows, None, started)
    for name, report in reports.items():
        (run_dir / f"calibration_{name}.json").write_text(_json_dump(report), encoding="utf-8")
    # reliability tables, one CSV per profile
    for name in sorted(presets):
        report_dict = reports[name]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["low", "high", "count", "mean_confidence", "accuracy"])
        for bucket in report_dict["buckets"]:
            writer.writerow(
                [
                    f"{bucket['low']:.1f}",
                    f"{bucket['high']:.1f}",
                    bucket["count"],
                    _fmt(bucket["mean_confidence"]),
                    _fmt(bucket["accuracy"]),
                ]
            )
        (run_dir / f"reliability_{name}.csv").write_text(buf.getvalue(), encoding="utf-8")
    print(f"wrote {run_dir}")
    for row in rows:
        hi = row["hiconf_accuracy"]
        print(
            f"{row['profile']}: overall={row['overall_accuracy']:.3f} "
            f"hiconf={'absent' if hi is None else f'{hi:.3f}'} "
            f"coverage={row['coverage']:.3f}"
        )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    started = time.time()
    data = load_config(args.config, args.set or [])
    if args.seed is not None:
        _set_path(data, "run.seed", args.seed)
    run_config = parse_run_config(data)
    cost_model = parse_cost_model(data)
    section = _section(data, "bench")
    try:
        draft_cfg = EndpointConfig.from_dict(_section(section, "draft_endpoint"))
        target_cfg = EndpointConfig.from_dict(_section(section, "target_endpoint"))
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError("bench", str(exc)) from exc
    prompts_file = section.get("prompts_file")
    if not prompts_file:
        raise ConfigError("bench.prompts_file", "missing")
    try:
        prompts = [
            line.strip()
            for line in Path(prompts_file).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    except OSError as exc:
        raise ConfigError("bench.prompts_file", str(exc)) from exc
    if not prompts:
        raise ConfigError("bench.prompts_file", "no prompts")

    draft = RemoteModel(draft_cfg, Tier.DRAFT)
    target = RemoteModel(target_cfg, Tier.TARGET)
    for name, model in (("draft", draft), ("target", target)):
        try:
            model.probe()
        except BackendError as exc:
            raise BackendError(
                f"{name} endpoint {model.config.base_url} failed the capability probe: {exc}"
            ) from exc

    rows: list[dict[str, Any]] = []
    for idx, prompt in enumerate(prompts):
        t0 = time.perf_counter()
        trace = run_trace(prompt, run_config, draft, target)
        elapsed = time.perf_counter() - t0
        ledger = trace.ledger
        rows.append(
            {
                "prompt_index": idx,
                "steps": len(trace.context.accepted_steps),
                "termination": trace.termination.value,
                "final_answer": trace.final_answer,
                "cascade_rate": cascade_rate(ledger) if ledger.draft_verify_calls else None,
                "acceptance_rate": acceptance_rate(ledger)
                if ledger.draft_verify_calls
                else None,
                "speedup_estimate": speedup_estimate(ledger, cost_model)
                if ledger.accepted_tokens
                else None,
                "wall_seconds": elapsed,
                **ledger.to_dict(),
            }
        )
    run_dir = write_run_outputs(Path(args.out_dir), "bench", data, rows, None, started)
    print(f"wrote {run_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(str(manifest_path), f"cannot read manifest: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(manifest_path), f"manifest is not JSON: {exc}") from exc
    snapshot = manifest.get("config", {})
    cost_model = parse_cost_model(snapshot)
    trace_files = manifest.get("outputs", {}).get("traces", [])
    if not trace_files:
        # nothing stored beyond the summary; re-emit it as-is
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        out = Path(args.out_dir) if args.out_dir else run_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(rows_to_csv(summary["rows"]), encoding="utf-8")
        print(f"re-rendered summary for {manifest.get('run_id')}")
        return EXIT_OK
    groups: dict[str, dict[str, Any]] = {}
    for rel in trace_files:
        doc = json.loads((run_dir / rel).read_text(encoding="utf-8"))
        meta = doc["meta"]
        key = json.dumps(meta["variant"], sort_keys=True)
        group = groups.setdefault(
            key, {"label": meta["variant"], "ledgers": [], "correct": 0, "steps": 0, "n": 0}
        )
        group["ledgers"].append(CostLedger.from_dict(doc["ledger"]))
        group["correct"] += 1 if meta["answer_correct"] else 0
        group["steps"] += len(doc["context"]["accepted_steps"])
        group["n"] += 1
    rows = []
    for key in sorted(groups):
        group = groups[key]
        ledger = merge_ledgers(group["ledgers"])
        row: dict[str, Any] = dict(group["label"])
        row["traces"] = group["n"]
        row["accuracy"] = group["correct"] / group["n"]
        row["cascade_rate"] = cascade_rate(ledger) if ledger.draft_verify_calls else None
        row["acceptance_rate"] = acceptance_rate(ledger) if ledger.draft_verify_calls else None
        row["speedup"] = speedup_estimate(ledger, cost_model)
        gen_calls = ledger.target_gen_calls + ledger.fallback_gen_calls
        gen_tokens = ledger.target_gen_tokens + ledger.fallback_gen_tokens
        row["tokens_per_target_call"] = gen_tokens / gen_calls if gen_calls else None
        row["mean_steps"] = group["steps"] / group["n"]
        row.update(ledger.to_dict())
        rows.append(row)
    out = Path(args.out_dir) if args.out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (out / "summary.json").write_text(
        _json_dump({"schema_version": 1, "config": snapshot, "rows": rows}), encoding="utf-8"
    )
    print(f"re-rendered {len(rows)} rows for {manifest.get('run_id')}")
    return EXIT_OK


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepspec",
        description="Step-level speculation benchmarks: simulate, calibrate, bench, report.",
    )
    parser.add_argument("--version", action="version", version=f"stepspec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override a config value (repeatable; wins over the file)",
        )
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out-dir", default="runs", help="output directory root")
        p.add_argument("--workers", type=int, default=1, help="trace worker pool size")

    p_sim = sub.add_parser("simulate", help="run simulated sweeps, emit CSV/JSON reports")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_cal = sub.add_parser("calibrate", help="verifier reliability study")
    common(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_bench = sub.add_parser("bench", help="live endpoints benchmark")
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_rep = sub.add_parser("report", help="re-render reports from a stored run")
    p_rep.add_argument("--run-dir", required=True, help="a run directory with manifest.json")
    p_rep.add_argument("--out-dir", default=None, help="where to write (default: in place)")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
