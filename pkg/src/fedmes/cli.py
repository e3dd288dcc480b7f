"""Command line experiment runner.

    python -m fedmes run --config smoke.json [--output runs/smoke]
    python -m fedmes compare runs/a/summary.csv runs/b/summary.csv
    python -m fedmes gen-data --spec stream.json --out stream.csv

Output layout of ``run``::

    <output_dir>/summary.csv
    <output_dir>/<method>/seed<s>/metrics.json
    <output_dir>/<method>/seed<s>/accuracy_tensor.csv
    <output_dir>/<method>/seed<s>/metrics_long.csv
    <output_dir>/<method>/curves.csv            (emit_curves only)
    <output_dir>/<method>/seed<s>/round_curve.csv  (emit_curves only)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import ConfigDict, TypeAdapter, ValidationError

from fedmes.federation import ExperimentPlan, run_experiment
from fedmes.inference import InferenceConfig
from fedmes.metrics import MetricsReport
from fedmes.nn_core import ModelSpec
from fedmes.tasks import StreamSpec, export_csv_stream, generate_streams, load_csv_stream
from fedmes.trainer import METHODS, TrainerConfig

log = logging.getLogger("fedmes")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SUMMARY_HEADER = ["method", "metric", "mean", "std", "n_seeds"]
_STRICT = ConfigDict(extra="forbid")


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    __pydantic_config__ = _STRICT
    hidden_dims: List[int] = field(default_factory=lambda: [32])
    activation: str = "relu"


@dataclass
class StreamSection:
    __pydantic_config__ = _STRICT
    n_clients: int = 3
    T: int = 3
    classes_per_task: Tuple[int, int] = (2, 5)
    samples_per_class_train: int = 50
    samples_per_class_test: int = 20
    generator: str = "gaussian_blobs"
    num_classes: int = 10
    input_dim: int = 10
    class_sep: float = 3.0
    noise: float = 1.0
    disjoint_tasks: bool = False
    csv_path: Optional[str] = None


@dataclass
class TrainerSection:
    __pydantic_config__ = _STRICT
    eta1: float = 0.05
    eta2: float = 0.05
    lambda_mode: Union[str, float, None] = None
    batch_size: int = 40
    local_epochs: int = 10
    mem_batch: Union[str, int] = "full"
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: Optional[float] = None


@dataclass
class InferenceSection:
    __pydantic_config__ = _STRICT
    theta: float = 0.5
    K: int = 9


@dataclass
class RunConfig:
    __pydantic_config__ = _STRICT
    methods: List[str]
    seeds: List[int]
    output_dir: str = "runs"
    emit_curves: bool = False
    rounds_per_task: int = 10
    memory_size: int = 150
    per_task_quota: Optional[int] = None
    model: ModelSection = field(default_factory=ModelSection)
    stream: StreamSection = field(default_factory=StreamSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    inference: InferenceSection = field(default_factory=InferenceSection)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


_ADAPTER = TypeAdapter(RunConfig)


def _check_invariants(cfg: RunConfig):
    if not cfg.methods:
        raise ConfigError("methods: must list at least one method")
    for j, m in enumerate(cfg.methods):
        if m not in METHODS:
            raise ConfigError(f"methods.{j}: unknown method {m!r}; expected one of {list(METHODS)}")
    if not cfg.seeds:
        raise ConfigError("seeds: must list at least one seed")
    if cfg.memory_size < 1:
        raise ConfigError("memory_size: must be positive")
    if cfg.rounds_per_task < 0:
        raise ConfigError("rounds_per_task: must be >= 0")
    if cfg.stream.generator == "csv_source" and not cfg.stream.csv_path:
        raise ConfigError("stream.csv_path: required when generator is csv_source")
    for section, build in (("model", lambda: _model_spec(cfg)),
                           ("stream", lambda: _stream_spec(cfg, 0).validate()),
                           ("trainer", lambda: _trainer(cfg, cfg.methods[0])),
                           ("inference", lambda: _inference(cfg))):
        try:
            build()
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return config_from_json(json.dumps(data))


def config_from_json(text: str) -> RunConfig:
    try:
        cfg = _ADAPTER.validate_json(text, strict=True)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            msgs.append(f"{loc}: {err['msg']}")
        raise ConfigError("; ".join(msgs)) from None
    _check_invariants(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_json(text)


def _model_spec(cfg):
    return ModelSpec(cfg.stream.input_dim, tuple(cfg.model.hidden_dims), cfg.stream.num_classes,
                     cfg.model.activation)


def _stream_spec(cfg, seed):
    fields = asdict(cfg.stream)
    fields.pop("csv_path")
    fields["classes_per_task"] = tuple(fields["classes_per_task"])
    return StreamSpec(seed=seed, **fields)


def _trainer(cfg, method):
    return TrainerConfig(method=method, **asdict(cfg.trainer))


def _inference(cfg):
    return InferenceConfig(theta=cfg.inference.theta, K=cfg.inference.K)


def build_plan(cfg: RunConfig, method: str, seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        model=_model_spec(cfg),
        stream=_stream_spec(cfg, seed),
        trainer=_trainer(cfg, method),
        inference=_inference(cfg),
        rounds_per_task=cfg.rounds_per_task,
        memory_size=cfg.memory_size,
        per_task_quota=cfg.per_task_quota,
        master_seed=seed,
        eval_every_round=cfg.emit_curves,
    )


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_cell(cfg: RunConfig, method: str, seed: int, out: Path) -> MetricsReport:
    """Run one (method, seed) experiment and write its artifacts."""
    plan = build_plan(cfg, method, seed)
    streams = None
    if cfg.stream.generator == "csv_source":
        streams = load_csv_stream(cfg.stream.csv_path, plan.stream)
        plan = replace(plan, stream=replace(plan.stream, n_clients=len(streams),
                                            T=min(s.T for s in streams)))
    report = run_experiment(plan, streams=streams)
    cell = out / method / f"seed{seed}"
    cell.mkdir(parents=True, exist_ok=True)
    (cell / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    (cell / "accuracy_tensor.csv").write_text(report.tensor_csv(), encoding="utf-8")
    _write_csv(cell / "metrics_long.csv", ["seed", "client", "task", "metric", "value"],
               [[*r[:4], repr(float(r[4]))] for r in report.long_rows(seed)])
    if cfg.emit_curves:
        _write_csv(cell / "round_curve.csv", ["task", "round", "acc"],
                   [[t, r, repr(v)] for t, r, v in report.curve])
    return report


def _cell_job(args):
    cfg, method, seed, out = args
    try:
        return method, seed, run_cell(cfg, method, seed, out), None
    except Exception as exc:  # reported by the parent; other cells keep going
        return method, seed, None, f"{type(exc).__name__}: {exc}"


def _threads():
    try:
        return max(1, int(os.environ.get("FEDMES_THREADS", "1")))
    except ValueError:
        return 1


def summarize(results) -> List[list]:
    rows = []
    for method, reports in results.items():
        if not reports:
            continue
        for metric in ("acc_all", "fr"):
            vals = np.array([getattr(r, metric) for r in reports])
            rows.append([method, metric, repr(float(vals.mean())), repr(float(vals.std())), len(vals)])
    return rows


def _write_curves(out: Path, method: str, reports: List[MetricsReport]):
    acc = np.array([r.acc_task for r in reports])
    fr = np.array([r.fr_task for r in reports])
    rows = [[t + 1, repr(float(acc[:, t].mean())), repr(float(acc[:, t].std())),
             repr(float(fr[:, t].mean())), repr(float(fr[:, t].std()))] for t in range(acc.shape[1])]
    _write_csv(out / method / "curves.csv",
               ["task", "acc_task_mean", "acc_task_std", "fr_mean", "fr_std"], rows)


def run(cfg: RunConfig, output_dir: Optional[str] = None) -> int:
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, m, s, out) for m in cfg.methods for s in cfg.seeds]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        outcomes = [_cell_job(j) for j in jobs]

    results = {m: [] for m in cfg.methods}
    failed = False
    for method, seed, report, err in outcomes:
        if err is not None:
            failed = True
            print(f"error: {method} seed {seed}: {err}", file=sys.stderr)
        else:
            results[method].append(report)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(results))
    if cfg.emit_curves:
        for method, reports in results.items():
            if reports:
                _write_curves(out, method, reports)
    return EXIT_RUNTIME if failed else EXIT_OK


def read_summary(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != SUMMARY_HEADER:
            raise ValueError(f"{path}: not a summary file (header {head})")
        table = {}
        for row in reader:
            if len(row) != len(SUMMARY_HEADER):
                raise ValueError(f"{path}: malformed row {row}")
            table[(row[0], row[1])] = (float(row[2]), float(row[3]))
    return table


def compare(paths, stream=None) -> str:
    """Side-by-side Acc/FR table; deltas are relative to the first summary."""
    if len(paths) < 2:
        raise ValueError("compare needs at least two summary files")
    tables = [read_summary(p) for p in paths]
    methods = []
    for tab in tables:
        for method, _ in tab:
            if method not in methods:
                methods.append(method)
    lines = []
    head = f"{'method':<14}" + "".join(f"{f'[{j}] Acc':>16}{f'[{j}] FR':>16}" for j in range(len(paths)))
    lines.append(head)
    for method in methods:
        cells = []
        base = tables[0]
        for tab in tables:
            for metric in ("acc_all", "fr"):
                if (method, metric) not in tab:
                    cells.append(f"{'-':>16}")
                    continue
                mean, std = tab[(method, metric)]
                txt = f"{mean:.3f}±{std:.3f}"
                if tab is not base and (method, metric) in base:
                    txt += f" ({mean - base[(method, metric)][0]:+.3f})"
                cells.append(f"{txt:>16}")
        lines.append(f"{method:<14}" + "".join(cells))
    for j, p in enumerate(paths):
        lines.append(f"[{j}] {p}")
    text = "\n".join(lines) + "\n"
    (stream or sys.stdout).write(text)
    return text


def gen_data(spec_path, out_path) -> None:
    data = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    try:
        spec = TypeAdapter(StreamSpec).validate_python(data, strict=False)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    spec.classes_per_task = tuple(spec.classes_per_task)
    export_csv_stream(generate_streams(spec), out_path)


def build_parser():
    p = argparse.ArgumentParser(prog="fedmes", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run every (method, seed) cell of a config")
    r.add_argument("--config", required=True)
    r.add_argument("--output")
    c = sub.add_parser("compare", help="print summaries side by side")
    c.add_argument("summaries", nargs="+")
    g = sub.add_parser("gen-data", help="export a synthetic stream to CSV")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            return run(parse_config(args.config), args.output)
        if args.cmd == "compare":
            compare(args.summaries)
            return EXIT_OK
        gen_data(args.spec, args.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
