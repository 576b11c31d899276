"""Command-line entry point: ``asmb gen|run|eval|report|selfcheck``.

Configuration comes from an optional YAML file, ``ASMB_*`` environment
variables and command-line flags, in increasing order of precedence. The
file is a flat mapping whose keys are the fields of :class:`CliConfig`;
unknown keys are rejected.

Exit codes: 0 when the command ran (cells may still have recorded
failures), 2 for bad input, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
import shutil
import sys
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import __version__
from .domain import Task, TaskParseError, serialize_task
from .memory import HistoryMode, RetrievalStrategy
from .metrics import BUCKET_WIDTH, length_bucket
from .policy import InferenceEndpointConfig, parse_policy_spec
from .records import RunRecord
from .runner import RunConfig, cell_key, run_suite, summarize
from .synth import GenerationError, SynthConfig, generate_suite, read_suite, self_check, suite_manifest, write_suite

logger = logging.getLogger("asmb")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_IO = 3

ENV_PREFIX = "ASMB_"
REDACTED = "***"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class CliConfig:
    """Effective configuration for every subcommand.

    Generation keys mirror :class:`SynthConfig`; run keys mirror
    :class:`RunConfig` plus the policy grid and endpoint settings.
    """

    # generation
    seed: int = 0
    num_tasks: int = 100
    length_range: list = field(default_factory=lambda: [20, 60])
    gap_range: list = field(default_factory=lambda: [10, 15])
    chains_range: list = field(default_factory=lambda: [1, 2])
    chain_spacing: Optional[int] = None
    exception_prob: float = 0.5
    summary_retention: float = 0.5
    app_pool_size: int = 8
    intent_mix: Optional[dict] = None
    # run grid
    policies: list = field(default_factory=lambda: ["oracle"])
    modes: list = field(default_factory=lambda: ["raw", "summary", "asm"])
    strategy: str = "all_active"
    budget: int = 4096
    concurrency: int = 1
    raw_window: Optional[int] = None
    record_timing: bool = False
    trace: bool = False
    # evaluation
    tcr_scope: str = "closure"
    text_threshold: Optional[float] = None
    # inference endpoint
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_inflight: int = 4

    def problems(self) -> list[str]:
        out = []
        for name in ("length_range", "gap_range", "chains_range"):
            v = getattr(self, name)
            if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_int(x) for x in v)):
                out.append(f"{name} must be a pair of integers")
        for m in self.modes:
            if m not in {x.value for x in HistoryMode}:
                out.append(f"unknown mode {m!r}")
        if not self.policies:
            out.append("at least one policy is required")
        if self.tcr_scope not in ("closure", "all"):
            out.append("tcr_scope must be 'closure' or 'all'")
        if self.budget <= 0:
            out.append("budget must be > 0")
        if self.concurrency < 1:
            out.append("concurrency must be >= 1")
        try:
            RetrievalStrategy.parse(self.strategy)
        except ValueError as e:
            out.append(f"bad strategy {self.strategy!r}: {e}")
        return out

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            seed=self.seed,
            num_tasks=self.num_tasks,
            length_range=tuple(self.length_range),
            gap_range=tuple(self.gap_range),
            chains_range=tuple(self.chains_range),
            chain_spacing=self.chain_spacing,
            exception_prob=self.exception_prob,
            summary_retention=self.summary_retention,
            intent_mix=self.intent_mix,
            app_pool_size=self.app_pool_size,
        )

    def run_config(self) -> RunConfig:
        return RunConfig(
            strategy=RetrievalStrategy.parse(self.strategy),
            budget=self.budget,
            seed=self.seed,
            concurrency=self.concurrency,
            record_timing=self.record_timing,
            raw_window=self.raw_window,
            tcr_scope=self.tcr_scope,
            text_threshold=self.text_threshold,
        )

    def endpoint_config(self) -> Optional[InferenceEndpointConfig]:
        if not self.endpoint or not self.model:
            return None
        return InferenceEndpointConfig(
            base_url=self.endpoint,
            model=self.model,
            timeout=self.timeout,
            max_retries=self.max_retries,
            temperature=self.temperature,
            api_key=self.api_key,
            max_inflight=self.max_inflight,
        )

    def to_dict(self, redact: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if redact and d["api_key"]:
            d["api_key"] = REDACTED
        return d


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


_FIELDS = {f.name: f for f in fields(CliConfig)}
_DEFAULTS = CliConfig()


def _coerce(name: str, value: Any) -> Any:
    """Check ``value`` against the type of the field's default."""
    default = getattr(_DEFAULTS, name)
    if value is None:
        return None
    if name in ("policies", "modes") and isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int) and not isinstance(default, bool):
        if _is_int(value):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            return list(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    else:
        # optional fields: types follow the field annotation
        ann = str(_FIELDS[name].type)
        if "int" in ann and _is_int(value):
            return value
        if "float" in ann and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if "str" in ann and isinstance(value, str):
            return value
        if "dict" in ann and isinstance(value, dict):
            return value
    raise CliError(f"config key {name!r}: bad value {value!r}")


def load_config_file(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e}", EXIT_IO) from e
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise CliError(f"config {path}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise CliError(f"config {path}: top level must be a mapping")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise CliError(f"config {path}: unknown keys {unknown}")
    return data


def env_overrides(environ: Optional[dict] = None) -> dict:
    """``ASMB_<KEY>`` for any config key; values are parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out = {}
    for name in _FIELDS:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is None:
            continue
        if name in ("endpoint", "model", "api_key", "strategy"):
            out[name] = raw
            continue
        try:
            out[name] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise CliError(f"{ENV_PREFIX}{name.upper()}: {e}") from e
    return out


def resolve_config(file_values: dict, env_values: dict, flag_values: dict) -> CliConfig:
    merged: dict[str, Any] = {}
    for layer in (file_values, env_values, flag_values):
        for k, v in layer.items():
            if v is not None:
                merged[k] = v
    cfg = CliConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    problems = cfg.problems()
    if problems:
        raise CliError("; ".join(problems))
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-")


def record_filename(task_id: str, policy_name: str, mode: str) -> str:
    return f"{_slug(task_id)}__{_slug(policy_name)}__{mode}.json"


def cell_hash(run_config: RunConfig, policy_name: str, mode: str, task: Task) -> str:
    """Resume key: everything that can change a record's content."""
    d = {
        "run": {k: v for k, v in run_config.to_dict().items() if k in ("strategy", "budget", "seed", "raw_window", "record_timing")},
        "policy": policy_name,
        "mode": mode,
        "task": hashlib.sha256(serialize_task(task)).hexdigest(),
    }
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _read_tasks(path: Path) -> list[Task]:
    try:
        return read_suite(path)
    except OSError as e:
        raise CliError(f"cannot read suite {path}: {e}", EXIT_IO) from e


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()  # noqa: E731
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in cells)
    return "\n".join(out) + "\n"


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


# ---------------------------------------------------------------------------
# gen / selfcheck


def cmd_gen(cfg: CliConfig, out: Path) -> int:
    synth = cfg.synth_config()
    try:
        tasks = generate_suite(synth)
    except GenerationError as e:
        raise CliError(f"invalid generation config: {e}") from e
    try:
        write_suite(out, tasks, suite_manifest(synth, name=Path(out).stem))
    except OSError as e:
        raise CliError(f"cannot write {out}: {e}", EXIT_IO) from e
    lengths = [len(t) for t in tasks]
    span = f"lengths {min(lengths)}-{max(lengths)}" if lengths else "empty"
    print(f"wrote {len(tasks)} tasks to {out} ({span})")
    return EXIT_OK


def cmd_selfcheck(cfg: CliConfig, suite: Path) -> int:
    tasks = _read_tasks(suite)
    bad = 0
    for t in tasks:
        problems = self_check(t)
        if problems:
            bad += 1
            for p in problems:
                print(f"{t.id}: {p}")
    print(f"checked {len(tasks)} tasks, {bad} with problems")
    return EXIT_OK if bad == 0 else EXIT_BAD_INPUT


# ---------------------------------------------------------------------------
# run


def _load_record_file(path: Path) -> Optional[dict]:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        return None
    except (OSError, ValueError) as e:
        logger.warning("ignoring unreadable record %s: %s", path, e)
        return None


def _is_complete(wrapped: Optional[dict], expected_hash: str) -> bool:
    if not wrapped or wrapped.get("config_hash") != expected_hash:
        return False
    errors = wrapped.get("record", {}).get("errors", [])
    # a cell whose decisions fell back (e.g. endpoint down) is redone on resume
    return not any(e.get("type") == "decision_failure" for e in errors)


def cmd_run(cfg: CliConfig, suite: Path, run_dir: Path) -> int:
    tasks = _read_tasks(suite)
    run_cfg = cfg.run_config()
    endpoint = cfg.endpoint_config()
    traces: dict[str, list] = {}
    policies = []
    for spec in cfg.policies:
        kwargs = {}
        if spec.startswith("chat") and cfg.trace:
            kwargs["trace"] = traces.setdefault(spec, [])
        try:
            policies.append(parse_policy_spec(spec, endpoint, **kwargs))
        except ValueError as e:
            raise CliError(f"bad policy {spec!r}: {e}") from e
    modes = [HistoryMode(m) for m in cfg.modes]

    records_dir = run_dir / "records"
    try:
        records_dir.mkdir(parents=True, exist_ok=True)
        suite_copy = run_dir / "suite.jsonl"
        if Path(suite).resolve() != suite_copy.resolve():
            shutil.copyfile(suite, suite_copy)
    except OSError as e:
        raise CliError(f"cannot prepare run directory {run_dir}: {e}", EXIT_IO) from e

    hashes: dict[tuple[str, str, str], str] = {}

    def sink(record: RunRecord) -> None:
        key = (record.task_id, record.policy, record.mode)
        wrapped = {"config_hash": hashes[key], "record": record.to_dict()}
        (records_dir / record_filename(*key)).write_text(_dump(wrapped))

    executed = skipped = 0
    failures: list[dict] = []
    try:
        for policy in policies:
            for mode in modes:
                pending = []
                for t in tasks:
                    key = (t.id, policy.name, mode.value)
                    hashes[key] = cell_hash(run_cfg, policy.name, mode.value, t)
                    existing = _load_record_file(records_dir / record_filename(*key))
                    if _is_complete(existing, hashes[key]):
                        skipped += 1
                    else:
                        pending.append(t)
                logger.info("cell %s: %d to run, %d already done", cell_key(policy.name, mode.value), len(pending), len(tasks) - len(pending))
                if not pending:
                    continue
                done, report = run_suite(pending, [(policy, mode)], run_cfg, sink=sink)
                executed += len(done)
                failures.extend(report.failures)
        for spec, entries in traces.items():
            trace_dir = run_dir / "traces"
            trace_dir.mkdir(exist_ok=True)
            with open(trace_dir / f"{_slug(spec)}.jsonl", "a") as f:
                for entry in entries:
                    f.write(json.dumps(entry, ensure_ascii=False) + "\n")

        all_records, _missing = load_run_records(run_dir, tasks, [p.name for p in policies], [m.value for m in modes])
        degraded = sum(any(e.get("type") == "decision_failure" for e in r.errors) for r in all_records)
        summary = summarize(all_records, tasks, run_cfg, failures) if all_records else None
        if summary is not None:
            (run_dir / "summary.json").write_text(summary.to_json())
        _write_manifest(run_dir, cfg, run_cfg, suite, tasks, policies, modes, executed, skipped, failures, degraded)
    except OSError as e:
        raise CliError(f"I/O error in {run_dir}: {e}", EXIT_IO) from e

    print(
        f"run {run_dir}: cells={len(tasks) * len(policies) * len(modes)} executed={executed} "
        f"skipped={skipped} failures={len(failures) + degraded}"
    )
    return EXIT_OK


def _write_manifest(run_dir, cfg, run_cfg, suite, tasks, policies, modes, executed, skipped, failures, degraded):
    path = run_dir / "manifest.json"
    previous = _load_record_file(path) or {}
    effective = cfg.to_dict(redact=True)
    manifest = {
        "version": __version__,
        "config": effective,
        "config_hash": hashlib.sha256(json.dumps(effective, sort_keys=True).encode()).hexdigest()[:16],
        "run_config": run_cfg.to_dict(),
        "run_config_hash": run_cfg.config_hash(),
        "suite": {
            "source": str(suite),
            "sha256": hashlib.sha256((run_dir / "suite.jsonl").read_bytes()).hexdigest(),
            "num_tasks": len(tasks),
        },
        "policies": [p.name for p in policies],
        "modes": [m.value for m in modes],
        "created_at": previous.get("created_at", _now()),
        "updated_at": _now(),
        "last_run": {
            "executed": executed,
            "skipped": skipped,
            "failures": failures,
            "cells_with_decision_failures": degraded,
        },
    }
    path.write_text(_dump(manifest))
    # the same effective config as a loadable file; secrets stay in the environment
    replay = {k: v for k, v in cfg.to_dict(redact=False).items() if k != "api_key"}
    (run_dir / "config.yaml").write_text(yaml.safe_dump(replay, sort_keys=True))


# ---------------------------------------------------------------------------
# eval / report


def load_run_records(
    run_dir: Path, tasks: Sequence[Task], policies: Sequence[str], modes: Sequence[str]
) -> tuple[list[RunRecord], list[str]]:
    """Load every expected record; missing ones are returned by file name."""
    records, missing = [], []
    for policy in policies:
        for mode in modes:
            for t in tasks:
                name = record_filename(t.id, policy, mode)
                wrapped = _load_record_file(run_dir / "records" / name)
                if wrapped is None:
                    missing.append(name)
                    continue
                records.append(RunRecord.from_dict(wrapped["record"]))
    return records, missing


def _open_run(run_dir: Path) -> tuple[dict, list[Task]]:
    manifest_file = run_dir / "manifest.json"
    if not run_dir.is_dir():
        raise CliError(f"run directory {run_dir} does not exist", EXIT_IO)
    try:
        manifest = json.loads(manifest_file.read_text())
    except FileNotFoundError as e:
        raise CliError(f"{run_dir} is not a run directory (no manifest.json)") from e
    except OSError as e:
        raise CliError(f"cannot read {manifest_file}: {e}", EXIT_IO) from e
    except ValueError as e:
        raise CliError(f"{manifest_file}: invalid JSON: {e}") from e
    return manifest, _read_tasks(run_dir / "suite.jsonl")


def evaluate_run(run_dir: Path, tcr_scope: str, text_threshold: Optional[float]) -> dict:
    manifest, tasks = _open_run(run_dir)
    records, missing = load_run_records(run_dir, tasks, manifest["policies"], manifest["modes"])
    run_cfg = RunConfig(tcr_scope=tcr_scope, text_threshold=text_threshold)
    cells = summarize(records, tasks, run_cfg).cells if records else {}
    return {
        "run_dir": str(run_dir),
        "partial": bool(missing),
        "missing": missing,
        "tcr_scope": tcr_scope,
        "text_threshold": text_threshold,
        "cells": cells,
        "_tasks": tasks,
    }


def _eval_settings(cfg: CliConfig, flags: dict, manifest_cfg: dict) -> tuple[str, Optional[float]]:
    scope = flags.get("tcr_scope") or manifest_cfg.get("tcr_scope") or cfg.tcr_scope
    thr = flags.get("text_threshold")
    if thr is None:
        thr = manifest_cfg.get("text_threshold", cfg.text_threshold)
    return scope, thr


_HEADERS = ("policy", "mode", "AMS", "TCR", "Avg Token", "Avg Time (s)", "tasks")


def _cell_rows(cells: dict) -> list[list]:
    rows = []
    for key, c in cells.items():
        policy, mode = key.rsplit("|", 1)
        rows.append([policy, mode, c["ams"], c["tcr"], c["avg_tokens"], c["avg_time_seconds"], c["n_tasks"]])
    return rows


def cmd_eval(cfg: CliConfig, run_dir: Path, flags: dict) -> int:
    manifest, _ = _open_run(run_dir)
    scope, thr = _eval_settings(cfg, flags, manifest.get("config", {}))
    result = evaluate_run(run_dir, scope, thr)
    result.pop("_tasks")
    table = format_table(_HEADERS, _cell_rows(result["cells"]))
    if result["partial"]:
        table += f"\npartial run: {len(result['missing'])} records missing\n"
    out = run_dir / "eval"
    try:
        out.mkdir(exist_ok=True)
        (out / "metrics.json").write_text(_dump(result))
        (out / "metrics.txt").write_text(table)
    except OSError as e:
        raise CliError(f"cannot write {out}: {e}", EXIT_IO) from e
    for name in result["missing"]:
        print(f"missing: {name}")
    print(table, end="")
    return EXIT_OK


def cmd_report(cfg: CliConfig, run_dirs: Sequence[Path], out: Path, flags: dict) -> int:
    cells: dict[str, dict] = {}
    seen_tasks: dict[str, int] = {}
    missing: list[str] = []
    for rd in run_dirs:
        manifest, _ = _open_run(rd)
        scope, thr = _eval_settings(cfg, flags, manifest.get("config", {}))
        result = evaluate_run(rd, scope, thr)
        for t in result["_tasks"]:
            seen_tasks[t.id] = len(t)
        missing.extend(f"{rd}/{m}" for m in result["missing"])
        for key, c in result["cells"].items():
            name = key if key not in cells else f"{key}@{rd.name}"
            cells[name] = c

    policies = sorted({k.rsplit("|", 1)[0] for k in cells})
    modes = [m.value for m in HistoryMode if any(k.rsplit("|", 1)[1] == m.value for k in cells)]
    matrix_rows = []
    for p in policies:
        row = [p]
        for m in modes:
            c = cells.get(f"{p}|{m}")
            row.append(f"{_fmt(c['ams'])} / {_fmt(c['tcr'])}" if c else "n/a")
        matrix_rows.append(row)
    text = "AMS / TCR by policy and history mode\n"
    text += format_table(["policy"] + modes, matrix_rows)
    text += "\n" + format_table(_HEADERS, _cell_rows(cells))
    if missing:
        text += f"\n{len(missing)} records missing\n"

    bucket_sizes: dict[str, int] = {}
    for n in seen_tasks.values():
        b = length_bucket(n)
        bucket_sizes[b] = bucket_sizes.get(b, 0) + 1
    buckets = sorted(bucket_sizes, key=lambda b: int(b.split("-")[0]))
    keys = list(cells)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(text)
        (out / "comparison.json").write_text(_dump({"cells": cells, "missing": missing, "bucket_width": BUCKET_WIDTH}))
        with open(out / "buckets.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bucket", "tasks"] + [f"{k} {m}" for k in keys for m in ("ams", "tcr")])
            for b in buckets:
                row: list[Any] = [b, bucket_sizes[b]]
                for k in keys:
                    g = cells[k]["per_bucket"].get(b)
                    row += [_csv_num(g and g["ams"]), _csv_num(g and g["tcr"])]
                w.writerow(row)
        intents = sorted({i for c in cells.values() for i in c["per_intent"]})
        with open(out / "intents.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["intent"] + [f"{k} {m}" for k in keys for m in ("ams", "tcr")])
            for i in intents:
                row = [i]
                for k in keys:
                    g = cells[k]["per_intent"].get(i)
                    row += [_csv_num(g and g["ams"]), _csv_num(g and g["tcr"])]
                w.writerow(row)
    except OSError as e:
        raise CliError(f"cannot write report to {out}: {e}", EXIT_IO) from e
    print(text, end="")
    return EXIT_OK


def _csv_num(v: Any) -> str:
    return "" if v is None else f"{v:.4f}"


# ---------------------------------------------------------------------------
# argument parsing


def _pair(text: str) -> list[int]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected MIN,MAX")
    try:
        return [int(p) for p in parts]
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected two integers") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="asmb", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"asmb {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic suite")
    g.add_argument("--out", type=Path, required=True, help="suite file to write (.jsonl)")
    g.add_argument("--tasks", dest="num_tasks", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--length", dest="length_range", type=_pair, metavar="MIN,MAX")
    g.add_argument("--gap", dest="gap_range", type=_pair, metavar="MIN,MAX")
    g.add_argument("--chains", dest="chains_range", type=_pair, metavar="MIN,MAX")
    g.add_argument("--chain-spacing", type=int)
    g.add_argument("--exception-prob", type=float)
    g.add_argument("--summary-retention", type=float)

    r = sub.add_parser("run", parents=[common], help="run policies over a suite")
    r.add_argument("suite", type=Path)
    r.add_argument("--out", type=Path, required=True, help="run directory")
    r.add_argument("--policy", dest="policies", action="append", help="oracle | forgetful:window=N | chat[:model=M]; repeatable")
    r.add_argument("--modes", help="comma-separated subset of raw,summary,asm")
    r.add_argument("--strategy", help="all_active | recency_top_k:K | link_closure")
    r.add_argument("--budget", type=int)
    r.add_argument("--concurrency", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--raw-window", type=int)
    r.add_argument("--record-timing", action="store_true", default=None)
    r.add_argument("--trace", action="store_true", default=None, help="keep prompts and raw responses of chat policies")
    r.add_argument("--endpoint")
    r.add_argument("--model")
    r.add_argument("--max-retries", type=int)
    r.add_argument("--timeout", type=float)

    for name, helptext in (("eval", "score one run directory"), ("report", "compare run directories")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        if name == "eval":
            e.add_argument("run_dir", type=Path)
        else:
            e.add_argument("run_dirs", type=Path, nargs="+")
            e.add_argument("--out", type=Path, required=True)
        e.add_argument("--tcr-scope", choices=("closure", "all"))
        e.add_argument("--text-threshold", type=float)

    s = sub.add_parser("selfcheck", parents=[common], help="replay ground truth against task predicates")
    s.add_argument("suite", type=Path)
    return ap


_NON_CONFIG = {"command", "config", "verbose", "out", "suite", "run_dir", "run_dirs"}


def main(argv: Optional[Sequence[str]] = None, environ: Optional[dict] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_BAD_INPUT
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
    try:
        cfg = resolve_config(load_config_file(args.config), env_overrides(environ), flags)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "selfcheck":
            return cmd_selfcheck(cfg, args.suite)
        if args.command == "run":
            return cmd_run(cfg, args.suite, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.run_dir, flags)
        return cmd_report(cfg, args.run_dirs, args.out, flags)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except TaskParseError as e:
        print(f"error: bad suite: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ValueError, GenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
