"""Sweep driver: experiment specs, grid fan-out, results files, summaries.

An experiment spec (JSON) names a testbed and the hyperparameter grids to
sweep.  `run_sweep` executes every (format x method x lr x lambda [x k])
combination, optionally across worker processes, and writes:

* results.csv  - one row per (arm, eval step), fixed column set;
* spec.json    - the fully resolved spec that produced the results;
* summary.json - per-group best final losses, ascending.

Reruns over a directory skip arms whose rows are already complete, so a
finished sweep is never recomputed.
"""

from __future__ import annotations

import csv
import difflib
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .quant import QuantFormat
from .rounding import Rr, RTN
from .tensorcore import NS_EVAL, RngStream, stream_id
from .testbeds import PowerLawTask, TwoLayerTask, gt_rounded_loss
from .trainers import Method, TrainConfig, evaluate_checkpoint, train

__all__ = [
    "SpecError",
    "ExperimentSpec",
    "parse_spec",
    "parse_spec_dict",
    "enumerate_arms",
    "run_sweep",
    "summarize",
    "read_results",
    "format_summary",
    "LR_GRID_QUADRATIC",
    "LR_GRID_TWOLAYER",
    "LAMBDA_GRID_FISHER",
    "RESULT_COLUMNS",
]

# Default learning-rate grids for the two testbeds.
LR_GRID_QUADRATIC = (3.0e-6, 3.0e-5, 3.0e-4, 3.0e-3, 1.0e-2, 3.0e-2, 1.0e-1, 3.0e-1, 6.0e-1, 8.0e-1)
LR_GRID_TWOLAYER = (0.0003, 0.003, 0.03, 0.1, 0.3, 0.6, 1.2)
# Regularizer-weight grid used when the curvature comes from the Fisher EMA
# instead of an exact Hessian diagonal.
LAMBDA_GRID_FISHER = (3000.0, 10000.0, 30000.0, 100000.0)

RESULT_COLUMNS = (
    "method",
    "fmt",
    "lr",
    "lambda",
    "seed",
    "step",
    "fp_loss",
    "rtn_loss",
    "rr_loss_mean",
    "rr_loss_sd",
    "lr_now",
    "diverged",
    "testbed",
    "k",
)

_TESTBEDS = ("quadratic", "twolayer", "gt-sweep")
_TRAINED_METHODS = tuple(m.value for m in Method)
_ALL_METHODS = _TRAINED_METHODS + ("ptq-target",)


class SpecError(ValueError):
    """Invalid experiment spec; message names the offending field."""


@dataclass(frozen=True)
class ExperimentSpec:
    testbed: str
    d: int = 512
    alpha: float = 1.1
    k_list: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    seed: int = 0
    formats: tuple[QuantFormat, ...] = (QuantFormat.uniform_int(4),)
    methods: tuple[str, ...] = ()
    lr_grid: tuple[float, ...] = ()
    lambda_grid: tuple[float, ...] = (1.0,)
    total_steps: int = 0
    eval_every: int = 50
    rr_eval_seeds: int = 8
    final_fraction: float = 0.0
    curvature: str = "exact"
    fisher_beta: float = 0.999
    differentiate_scale: bool = False
    optimizer: str = "sgd"
    out: str | None = None

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d["formats"] = [f.name if f.name.startswith(("int", "fp4")) else _fmt_to_obj(f) for f in self.formats]
        return d

    def spec_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _fmt_to_obj(fmt: QuantFormat) -> dict:
    obj: dict = {"block_size": fmt.block_size}
    if fmt.is_uniform:
        obj.update(kind="uniform_int", bits=fmt.bits)
    else:
        obj.update(kind="codebook", levels=list(fmt.levels))
    return obj


def _parse_format(entry, where: str) -> QuantFormat:
    try:
        if isinstance(entry, str):
            return QuantFormat.from_name(entry)
        if isinstance(entry, dict):
            kind = entry.get("kind")
            block = entry.get("block_size")
            if kind == "uniform_int":
                return QuantFormat.uniform_int(int(entry["bits"]), block)
            if kind == "codebook":
                return QuantFormat.codebook(entry["levels"], block)
            raise ValueError(f"kind must be 'uniform_int' or 'codebook', got {kind!r}")
        raise ValueError(f"expected string or object, got {type(entry).__name__}")
    except (KeyError, ValueError) as exc:
        raise SpecError(f"{where}: {exc}") from exc


_SPEC_FIELDS = {
    "testbed",
    "d",
    "alpha",
    "k_list",
    "seed",
    "formats",
    "methods",
    "lr_grid",
    "lambda_grid",
    "total_steps",
    "eval_every",
    "rr_eval_seeds",
    "final_fraction",
    "curvature",
    "fisher_beta",
    "differentiate_scale",
    "optimizer",
    "out",
}


def parse_spec_dict(raw: dict) -> ExperimentSpec:
    """Validate a spec dict, rejecting unknown keys and filling defaults."""
    for key in raw:
        if key not in _SPEC_FIELDS:
            hint = difflib.get_close_matches(key, sorted(_SPEC_FIELDS), n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise SpecError(f"unknown key {key!r}{suffix}")

    testbed = raw.get("testbed")
    if testbed not in _TESTBEDS:
        raise SpecError(f"testbed: one of {_TESTBEDS} required, got {testbed!r}")

    def _positive_int(key, default):
        val = raw.get(key, default)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise SpecError(f"{key}: positive integer required, got {val!r}")
        return val

    d = _positive_int("d", 512)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise SpecError(f"seed: nonnegative integer required, got {seed!r}")
    alpha = raw.get("alpha", 1.1)
    if not isinstance(alpha, (int, float)) or alpha <= 0:
        raise SpecError(f"alpha: positive number required, got {alpha!r}")

    k_list = raw.get("k_list", [1, 2, 4, 8, 16, 32, 64, 128, 256])
    if not isinstance(k_list, (list, tuple)) or not k_list or any(
        not isinstance(k, int) or isinstance(k, bool) or k < 1 for k in k_list
    ):
        raise SpecError(f"k_list: nonempty list of positive integers required, got {k_list!r}")

    fmt_entries = raw.get("formats", ["int4"])
    if not isinstance(fmt_entries, (list, tuple)) or not fmt_entries:
        raise SpecError("formats: nonempty list required")
    formats = tuple(_parse_format(e, f"formats[{i}]") for i, e in enumerate(fmt_entries))

    default_methods = {
        "quadratic": ["ptq", "ptq-target", "qat", "rat", "lotion"],
        "twolayer": ["ptq", "qat", "rat", "lotion"],
        "gt-sweep": [],
    }[testbed]
    methods = raw.get("methods", default_methods)
    if not isinstance(methods, (list, tuple)):
        raise SpecError(f"methods: list required, got {methods!r}")
    if testbed != "gt-sweep" and not methods:
        raise SpecError("methods: nonempty list required")
    for m in methods:
        if m not in _ALL_METHODS:
            raise SpecError(f"methods: unknown method {m!r}, expected one of {_ALL_METHODS}")
        if m == "ptq-target" and testbed != "quadratic":
            raise SpecError("methods: 'ptq-target' is only defined for the quadratic testbed")

    default_lr = {"quadratic": LR_GRID_QUADRATIC, "twolayer": LR_GRID_TWOLAYER, "gt-sweep": ()}[testbed]
    lr_grid = raw.get("lr_grid", list(default_lr))
    needs_lr = testbed != "gt-sweep" and any(m != "ptq-target" for m in methods)
    if needs_lr and (not isinstance(lr_grid, (list, tuple)) or not lr_grid):
        raise SpecError("lr_grid: nonempty list required")
    if any(not isinstance(x, (int, float)) or x <= 0 for x in lr_grid):
        raise SpecError(f"lr_grid: positive numbers required, got {lr_grid!r}")

    lambda_grid = raw.get("lambda_grid", [1.0])
    if not isinstance(lambda_grid, (list, tuple)) or not lambda_grid:
        raise SpecError("lambda_grid: nonempty list required")
    if any(not isinstance(x, (int, float)) or x < 0 for x in lambda_grid):
        raise SpecError(f"lambda_grid: nonnegative numbers required, got {lambda_grid!r}")

    default_steps = {"quadratic": 2000, "twolayer": 1200, "gt-sweep": 1}[testbed]
    total_steps = _positive_int("total_steps", default_steps)
    eval_every = _positive_int("eval_every", 50 if total_steps % 50 == 0 else total_steps)
    if total_steps % eval_every != 0:
        raise SpecError(f"eval_every: must divide total_steps ({total_steps}), got {eval_every}")
    rr_eval_seeds = _positive_int("rr_eval_seeds", 8)

    final_fraction = raw.get("final_fraction", 0.0)
    if not isinstance(final_fraction, (int, float)) or not 0.0 <= final_fraction <= 1.0:
        raise SpecError(f"final_fraction: number in [0, 1] required, got {final_fraction!r}")

    curvature = raw.get("curvature", "exact")
    if curvature not in ("exact", "fisher"):
        raise SpecError(f"curvature: 'exact' or 'fisher' required, got {curvature!r}")
    fisher_beta = raw.get("fisher_beta", 0.999)
    if not isinstance(fisher_beta, (int, float)) or not 0.0 <= fisher_beta < 1.0:
        raise SpecError(f"fisher_beta: number in [0, 1) required, got {fisher_beta!r}")

    differentiate_scale = raw.get("differentiate_scale", False)
    if not isinstance(differentiate_scale, bool):
        raise SpecError(f"differentiate_scale: boolean required, got {differentiate_scale!r}")

    optimizer = raw.get("optimizer", "sgd")
    if optimizer != "sgd":
        raise SpecError(f"optimizer: only 'sgd' is available, got {optimizer!r}")

    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise SpecError(f"out: string path required, got {out!r}")

    return ExperimentSpec(
        testbed=testbed,
        d=d,
        alpha=float(alpha),
        k_list=tuple(k_list),
        seed=seed,
        formats=formats,
        methods=tuple(methods),
        lr_grid=tuple(float(x) for x in lr_grid),
        lambda_grid=tuple(float(x) for x in lambda_grid),
        total_steps=total_steps,
        eval_every=eval_every,
        rr_eval_seeds=rr_eval_seeds,
        final_fraction=float(final_fraction),
        curvature=curvature,
        fisher_beta=float(fisher_beta),
        differentiate_scale=differentiate_scale,
        optimizer=optimizer,
        out=out,
    )


def parse_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise SpecError(f"spec file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SpecError("spec must be a JSON object")
    return parse_spec_dict(raw)


# ---------------------------------------------------------------------------
# Arm enumeration and execution


@dataclass(frozen=True)
class Arm:
    testbed: str
    method: str
    fmt: QuantFormat
    lr: float
    lam: float
    k: int | None

    def key(self) -> tuple:
        return (self.testbed, self.fmt.name, self.method, -1 if self.k is None else self.k, self.lr, self.lam)


def enumerate_arms(spec: ExperimentSpec) -> list[Arm]:
    arms: list[Arm] = []
    ks: list[int | None] = [None] if spec.testbed == "quadratic" else list(spec.k_list)
    for fmt in spec.formats:
        for k in ks:
            if spec.testbed == "gt-sweep":
                arms.append(Arm(spec.testbed, "gt", fmt, 0.0, 0.0, k))
                continue
            for method in spec.methods:
                if method == "ptq-target":
                    arms.append(Arm(spec.testbed, method, fmt, 0.0, 0.0, k))
                    continue
                lams = spec.lambda_grid if method == "lotion" else (0.0,)
                for lr in spec.lr_grid:
                    for lam in lams:
                        arms.append(Arm(spec.testbed, method, fmt, lr, lam, k))
    arms.sort(key=Arm.key)
    return arms


def _build_task(spec: ExperimentSpec, k: int | None):
    if spec.testbed == "quadratic":
        return PowerLawTask.build(spec.d, spec.alpha, spec.seed)
    return TwoLayerTask.build(spec.d, k, spec.alpha, spec.seed)


def _record_to_row(spec: ExperimentSpec, arm: Arm, rec) -> dict:
    return {
        "method": arm.method,
        "fmt": arm.fmt.name,
        "lr": arm.lr,
        "lambda": arm.lam,
        "seed": spec.seed,
        "step": rec.step,
        "fp_loss": rec.fp_loss,
        "rtn_loss": rec.rtn_loss,
        "rr_loss_mean": rec.rr_loss_mean,
        "rr_loss_sd": rec.rr_loss_sd,
        "lr_now": rec.lr_now,
        "diverged": rec.diverged,
        "testbed": spec.testbed,
        "k": arm.k,
    }


def run_arm(spec: ExperimentSpec, arm: Arm) -> list[dict]:
    """Execute one grid arm and return its result rows."""
    task = _build_task(spec, arm.k)

    if arm.method == "ptq-target":
        rec = evaluate_checkpoint(
            task, [task.w_star], arm.fmt, spec.rr_eval_seeds, spec.seed, step=0, lr_now=0.0
        )
        return [_record_to_row(spec, arm, rec)]

    if arm.method == "gt":
        fp_loss = task.loss(*task.gt_weights())
        rtn_loss = gt_rounded_loss(task, arm.fmt, RTN)
        rr = np.array(
            [
                gt_rounded_loss(task, arm.fmt, Rr(RngStream(spec.seed, stream_id(NS_EVAL, 0, j))))
                for j in range(spec.rr_eval_seeds)
            ]
        )
        row = {
            "method": "gt",
            "fmt": arm.fmt.name,
            "lr": 0.0,
            "lambda": 0.0,
            "seed": spec.seed,
            "step": 0,
            "fp_loss": fp_loss,
            "rtn_loss": rtn_loss,
            "rr_loss_mean": float(rr.mean()),
            "rr_loss_sd": float(rr.std()),
            "lr_now": 0.0,
            "diverged": False,
            "testbed": spec.testbed,
            "k": arm.k,
        }
        return [row]

    config = TrainConfig(
        method=Method(arm.method),
        lr=arm.lr,
        total_steps=spec.total_steps,
        fmt=arm.fmt,
        lam=arm.lam,
        eval_every=spec.eval_every,
        rr_eval_seeds=spec.rr_eval_seeds,
        seed=spec.seed,
        final_fraction=spec.final_fraction,
        curvature=spec.curvature,
        fisher_beta=spec.fisher_beta,
        differentiate_scale=spec.differentiate_scale,
    )
    result = train(config, task)
    return [_record_to_row(spec, arm, rec) for rec in result.records]


def _run_arm_star(args) -> list[dict]:
    return run_arm(*args)


# ---------------------------------------------------------------------------
# Results file


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row_sort_key(row: dict) -> tuple:
    return (
        row["testbed"],
        row["fmt"],
        row["method"],
        -1 if row["k"] is None else row["k"],
        row["lr"],
        row["lambda"],
        row["seed"],
        row["step"],
    )


def write_results(path, rows: list[dict], spec_hash: str) -> None:
    rows = sorted(rows, key=_row_sort_key)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(path, "w", newline="") as fh:
        fh.write(f"# lotion-lab results-v1 spec={spec_hash} tool={__version__} generated={stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in RESULT_COLUMNS])


def read_results(path) -> tuple[dict, list[dict]]:
    """Parse a results file into (header metadata, typed rows)."""
    path = Path(path)
    meta: dict = {}
    rows: list[dict] = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for token in first[1:].split():
                if "=" in token:
                    k, _, v = token.partition("=")
                    meta[k] = v
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        for raw in reader:
            rows.append(
                {
                    "method": raw["method"],
                    "fmt": raw["fmt"],
                    "lr": float(raw["lr"]),
                    "lambda": float(raw["lambda"]),
                    "seed": int(raw["seed"]),
                    "step": int(raw["step"]),
                    "fp_loss": float(raw["fp_loss"]),
                    "rtn_loss": float(raw["rtn_loss"]),
                    "rr_loss_mean": float(raw["rr_loss_mean"]),
                    "rr_loss_sd": float(raw["rr_loss_sd"]),
                    "lr_now": float(raw["lr_now"]),
                    "diverged": raw["diverged"] == "1",
                    "testbed": raw["testbed"],
                    "k": None if raw["k"] == "" else int(raw["k"]),
                }
            )
    return meta, rows


def _expected_rows(spec: ExperimentSpec, arm: Arm) -> int:
    if arm.method in ("ptq-target", "gt"):
        return 1
    return spec.total_steps // spec.eval_every


def _arm_key_of_row(row: dict) -> tuple:
    return (
        row["testbed"],
        row["fmt"],
        row["method"],
        -1 if row["k"] is None else row["k"],
        row["lr"],
        row["lambda"],
    )


def run_sweep(spec: ExperimentSpec, workers: int = 1, out_dir=None) -> Path:
    """Execute all arms of the spec, writing results into `out_dir`.

    Completed arms already present in the directory's results.csv are not
    recomputed; a fully complete file is left untouched byte for byte.
    Returns the results.csv path.
    """
    out_dir = Path(out_dir if out_dir is not None else (spec.out or "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    spec_hash = spec.spec_hash()

    arms = enumerate_arms(spec)
    existing_rows: list[dict] = []
    done_keys: set[tuple] = set()
    if results_path.exists():
        meta, prior = read_results(results_path)
        if meta.get("spec") == spec_hash:
            by_arm: dict[tuple, list[dict]] = {}
            for row in prior:
                by_arm.setdefault(_arm_key_of_row(row), []).append(row)
            for arm in arms:
                got = by_arm.get(arm.key(), [])
                if got and (any(r["diverged"] for r in got) or len(got) >= _expected_rows(spec, arm)):
                    done_keys.add(arm.key())
                    existing_rows.extend(got)

    todo = [arm for arm in arms if arm.key() not in done_keys]
    if todo:
        if workers <= 1:
            produced = [run_arm(spec, arm) for arm in todo]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                produced = list(pool.map(_run_arm_star, [(spec, arm) for arm in todo]))
        rows = existing_rows + [row for chunk in produced for row in chunk]
        write_results(results_path, rows, spec_hash)

    (out_dir / "spec.json").write_text(json.dumps(spec.canonical_dict(), indent=2, sort_keys=True) + "\n")
    summary = summarize(results_path)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return results_path


# ---------------------------------------------------------------------------
# Summaries


def _final_rows_by_arm(rows: list[dict]) -> dict[tuple, dict]:
    finals: dict[tuple, dict] = {}
    for row in rows:
        key = _arm_key_of_row(row)
        cur = finals.get(key)
        if cur is None or row["step"] > cur["step"]:
            finals[key] = row
    return finals


def summarize(results_path) -> dict:
    """Best final loss per (testbed, fmt, k, method, eval rounding), ascending.

    Divergent arms are excluded from selection but counted in the output.
    """
    results_path = Path(results_path)
    if results_path.is_dir():
        results_path = results_path / "results.csv"
    if not results_path.exists():
        raise FileNotFoundError(f"results file not found: {results_path}")
    meta, rows = read_results(results_path)
    finals = _final_rows_by_arm(rows)

    groups: dict[tuple, dict] = {}
    diverged_count = 0
    for key, row in finals.items():
        if row["diverged"]:
            diverged_count += 1
            continue
        gkey = (row["testbed"], row["fmt"], row["k"])
        group = groups.setdefault(gkey, {})
        for metric, col in (("rtn", "rtn_loss"), ("rr", "rr_loss_mean")):
            mkey = (row["method"], metric)
            cand = (row[col], row["lr"], row)
            if mkey not in group or cand[:2] < group[mkey][:2]:
                group[mkey] = cand

    out_groups = []
    for gkey in sorted(groups, key=lambda g: (g[0], g[1], -1 if g[2] is None else g[2])):
        table = []
        for (method, metric), (loss, lr, row) in groups[gkey].items():
            table.append(
                {
                    "method": method,
                    "metric": metric,
                    "final_loss": loss,
                    "lr": lr,
                    "lambda": row["lambda"],
                    "step": row["step"],
                }
            )
        table.sort(key=lambda e: (e["final_loss"], e["method"], e["metric"]))
        out_groups.append(
            {"testbed": gkey[0], "fmt": gkey[1], "k": gkey[2], "rows": table}
        )
    return {
        "spec": meta.get("spec", ""),
        "tool": meta.get("tool", __version__),
        "diverged_arms": diverged_count,
        "groups": out_groups,
    }


def format_summary(summary: dict) -> str:
    lines = [f"spec {summary['spec']}  (diverged arms: {summary['diverged_arms']})"]
    for group in summary["groups"]:
        kpart = "" if group["k"] is None else f"  k={group['k']}"
        lines.append(f"\n[{group['testbed']}  {group['fmt']}{kpart}]")
        lines.append(f"{'method':<12} {'metric':<6} {'final loss':>14} {'lr':>10} {'lambda':>10}")
        for row in group["rows"]:
            lines.append(
                f"{row['method']:<12} {row['metric']:<6} {row['final_loss']:>14.6g}"
                f" {row['lr']:>10.3g} {row['lambda']:>10.3g}"
            )
    return "\n".join(lines)
