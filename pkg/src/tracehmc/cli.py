"""Experiment runner: ``tracehmc run | verify | plotdata``.

Per-run seeds are derived from the master seed as the first 8 bytes
(little endian) of ``sha256(f"{seed}:{run}")``, so the output does not
depend on how runs are scheduled across worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import click
import numpy as np

from tracehmc import diagnostics as dg
from tracehmc.baselines import importance_sample, lmh_kernel, rmh_kernel
from tracehmc.model import Model
from tracehmc.models import (
    dpmm,
    dpmm_params,
    generate_mixture_data,
    geometric,
    geometric_pmf,
    gmm,
    gmm_params,
    pointwise_mixture_lik,
    random_walk,
)
from tracehmc.npdhmc import npdhmc_step
from tracehmc.nphmc import SamplerConfig, nphmc_step, run_chain
from tracehmc.nprhmc import nprhmc_step

logger = logging.getLogger(__name__)

MODELS = ("geometric", "walk", "gmm", "dpmm")
ALGORITHMS = ("nphmc", "npdhmc", "nprhmc", "lmh", "rmh", "is")
HMC_ALGORITHMS = ("nphmc", "npdhmc", "nprhmc")

MODEL_DEFAULTS: dict[str, dict[str, Any]] = {
    "geometric": dict(steps=5, eps=0.1, samples=1000, burnin=100, runs=10),
    "walk": dict(steps=50, eps=0.1, samples=1000, burnin=100, runs=10),
    "gmm": dict(steps=50, eps=0.05, samples=1000, burnin=100, runs=10),
    "dpmm": dict(steps=20, eps=0.05, samples=100, burnin=50, runs=10),
}

GEOMETRIC_P = 0.2
GEOMETRIC_SUPPORT = tuple(range(1, 51))
WALK_GRID = np.linspace(0.0, 3.0, 151)
K_SUPPORT = tuple(range(1, 31))


@dataclass(frozen=True)
class ExperimentSpec:
    model: str
    algorithm: str = "npdhmc"
    samples: int = 1000
    burnin: int = 100
    runs: int = 10
    eps: float = 0.1
    steps: int = 5
    thin: int = 1
    seed: int = 0
    trim: bool = True
    rmh_sigma: float = 1.0
    data_seed: int = 0
    n_train: int = 200
    n_test: int = 50

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.runs < 1 or self.thin < 1:
            raise ValueError("runs and thin must be at least 1")
        if self.algorithm == "nprhmc" and self.model != "geometric":
            raise ValueError("nprhmc ships an oracle for the geometric model only")
        if self.model in ("gmm", "dpmm") and (self.n_train < 1 or self.n_test < 1):
            raise ValueError("gmm/dpmm need nonempty training and test sets")
        self.sampler_config(0)

    def sampler_config(self, run_seed: int) -> SamplerConfig:
        return SamplerConfig(
            epsilon=self.eps,
            steps=self.steps,
            n_samples=self.samples * self.thin,
            burn_in=self.burnin * self.thin,
            thinning=self.thin,
            seed=run_seed,
            trim=self.trim,
        )


def derive_seed(master: int, run: int) -> int:
    digest = hashlib.sha256(f"{master}:{run}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# --- models and metrics ----------------------------------------------------


@dataclass
class Problem:
    model: Model
    test_points: Optional[np.ndarray] = None
    loglik: Optional[Callable[[Any, np.ndarray], np.ndarray]] = None


def _gmm_loglik(value, points):
    weights, means = gmm_params(value)
    return pointwise_mixture_lik(points, means, weights)


def _dpmm_loglik(value, points):
    weights, means = dpmm_params(value)
    return pointwise_mixture_lik(points, means, weights)


def build_problem(spec: ExperimentSpec) -> Problem:
    if spec.model == "geometric":
        return Problem(geometric(GEOMETRIC_P))
    if spec.model == "walk":
        return Problem(random_walk())
    train, test = generate_mixture_data(spec.n_train, spec.n_test, k_true=9, seed=spec.data_seed)
    if spec.model == "gmm":
        return Problem(gmm(train), test.points, _gmm_loglik)
    return Problem(dpmm(train), test.points, _dpmm_loglik)


def lppd_curve(values: list, weights: Optional[np.ndarray], problem: Problem) -> list[float]:
    """LPPD of the first ``n`` samples for every ``n``."""
    if not values:
        return []
    table = np.stack([problem.loglik(v, problem.test_points) for v in values])  # (S, n_test)
    if weights is None:
        lw = np.zeros(len(values))
    else:
        with np.errstate(divide="ignore"):
            lw = np.log(weights)
    out = []
    acc = np.full(table.shape[1], -np.inf)
    norm = -np.inf
    for s in range(len(values)):
        acc = np.logaddexp(acc, table[s] + lw[s])
        norm = np.logaddexp(norm, lw[s])
        out.append(float(np.sum(acc - norm)))
    return out


def compute_metrics(spec: ExperimentSpec, values: list, log_weights: Optional[list],
                    problem: Optional[Problem] = None) -> dict[str, Any]:
    """Per-run metrics; ``log_weights`` is given for importance samples only."""
    problem = problem or build_problem(spec)
    w = None
    if log_weights is not None:
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max()) if np.isfinite(lw).any() else np.zeros(len(lw))
    m: dict[str, Any] = {"n": len(values)}
    if not values:
        return m
    if spec.model == "geometric":
        ks = [int(v[0]) for v in values]
        h = dg.discrete_histogram(ks, GEOMETRIC_SUPPORT, weights=w)
        truth = dg.pmf_histogram(lambda k: geometric_pmf(k, GEOMETRIC_P), GEOMETRIC_SUPPORT)
        m["tvd"] = dg.tvd(h, truth)
        m["k_hist"] = h.masses.tolist()
    elif spec.model == "walk":
        starts = np.array([v[0] for v in values])
        if w is None:
            m["ess"] = dg.ess_autocorr(starts) if len(starts) >= 10 else float("nan")
            m["kde"] = dg.kde(starts, WALK_GRID).tolist() if np.ptp(starts) > 0 else None
        else:
            m["ess"] = dg.ess_weighted(w)
            m["kde"] = _weighted_kde(starts, w, WALK_GRID).tolist()
    else:
        if spec.model == "gmm":
            ks = [int(v[0]) for v in values]
            h = dg.discrete_histogram(ks, K_SUPPORT, weights=w)
            m["k_hist"] = h.masses.tolist()
            m["k_mode"] = int(K_SUPPORT[int(np.argmax(h.masses[:-1]))])
        curve = lppd_curve(values, w, problem)
        m["lppd"] = curve[-1]
        m["lppd_curve"] = curve
    return m


def _weighted_kde(x: np.ndarray, w: np.ndarray, grid: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    mean = float(w @ x)
    sd = math.sqrt(max(float(w @ (x - mean) ** 2), 1e-300))
    h = 1.06 * sd * dg.ess_weighted(w) ** (-0.2)
    z = (grid[:, None] - x[None, :]) / h
    return (np.exp(-0.5 * z * z) * w).sum(axis=1) / (h * math.sqrt(2 * math.pi))


SCALAR_METRICS = ("tvd", "ess", "lppd", "k_mode")
VECTOR_METRICS = ("k_hist", "kde", "lppd_curve")


def aggregate(per_run: list[dict]) -> dict[str, Any]:
    ok = [r["metrics"] for r in per_run if "metrics" in r]
    agg: dict[str, Any] = {"runs_ok": len(ok), "runs_failed": len(per_run) - len(ok)}
    for key in SCALAR_METRICS:
        vals = [r[key] for r in ok if r.get(key) is not None]
        if vals:
            a = np.asarray(vals, dtype=float)
            agg[key] = {"mean": float(a.mean()), "sd": float(a.std(ddof=1)) if len(a) > 1 else 0.0}
    for key in VECTOR_METRICS:
        vals = [r[key] for r in ok if r.get(key) is not None]
        if vals and len({len(v) for v in vals}) == 1:
            a = np.asarray(vals, dtype=float)
            agg[key] = {"mean": a.mean(axis=0).tolist(),
                        "sd": (a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])).tolist()}
    return agg


# --- running ---------------------------------------------------------------


def _step_fn(spec: ExperimentSpec):
    return {
        "nphmc": nphmc_step,
        "npdhmc": npdhmc_step,
        "nprhmc": nprhmc_step,
        "lmh": lmh_kernel,
        "rmh": rmh_kernel(spec.rmh_sigma),
    }[spec.algorithm]


def run_one(spec: ExperimentSpec, run: int) -> dict[str, Any]:
    """One independent run; errors are recorded instead of raised."""
    seed = derive_seed(spec.seed, run)
    rng = np.random.default_rng(seed)
    problem = build_problem(spec)
    t0 = time.perf_counter()
    try:
        if spec.algorithm == "is":
            draws = importance_sample(problem.model, spec.samples, rng)
            records = [dict(value=list(s.value), trace_len=len(s.trace), accepted=True,
                            log_weight=s.log_weight) for s in draws]
            metrics = compute_metrics(spec, [r["value"] for r in records],
                                      [r["log_weight"] for r in records], problem)
        else:
            chain = run_chain(problem.model, spec.sampler_config(seed), rng, step=_step_fn(spec))
            records = [dict(value=list(s.value), trace_len=len(s.trace), accepted=bool(s.accepted),
                            log_weight=s.log_weight) for s in chain]
            metrics = compute_metrics(spec, [r["value"] for r in records], None, problem)
    except Exception as exc:  # a failed run must not sink the whole report
        logger.exception("run %d failed", run)
        return {"run": run, "seed": seed, "error": f"{type(exc).__name__}: {exc}", "records": []}
    elapsed = time.perf_counter() - t0
    return {"run": run, "seed": seed, "metrics": metrics, "records": records,
            "seconds": elapsed, "seconds_per_sample": elapsed / max(1, spec.samples)}


def run_experiment(spec: ExperimentSpec, out: Path, jobs: int = 1) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, [spec] * spec.runs, range(spec.runs)))
    else:
        results = [run_one(spec, r) for r in range(spec.runs)]
    results.sort(key=lambda r: r["run"])
    with open(out / "samples.jsonl", "w") as fh:
        for res in results:
            for i, rec in enumerate(res["records"]):
                row = {"run": res["run"], "index": i, **rec}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    per_run = []
    for res in results:
        entry = {k: v for k, v in res.items() if k != "records"}
        per_run.append(entry)
    summary = {
        "spec": dataclasses.asdict(spec),
        "seed_rule": "sha256(f'{seed}:{run}')[:8] little-endian",
        "per_run": per_run,
        "aggregate": aggregate(per_run),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def load_samples(path: Path) -> dict[int, list[dict]]:
    by_run: dict[int, list[dict]] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            by_run.setdefault(rec["run"], []).append(rec)
    for recs in by_run.values():
        recs.sort(key=lambda r: r["index"])
    return by_run


def _close(a, b, tol=1e-9) -> bool:
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_close(x, y, tol) for x, y in zip(a, b))
    if a is None or b is None:
        return a is b
    a, b = float(a), float(b)
    if math.isnan(a) and math.isnan(b):
        return True
    return a == b or abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def verify_report(out: Path) -> list[str]:
    """Recompute per-run metrics and aggregates from the sample file; returns mismatches."""
    summary = json.loads((out / "summary.json").read_text())
    spec = ExperimentSpec(**summary["spec"])
    by_run = load_samples(out / "samples.jsonl")
    problem = build_problem(spec)
    problems = []
    for entry in summary["per_run"]:
        if "metrics" not in entry:
            continue
        recs = by_run.get(entry["run"], [])
        values = [r["value"] for r in recs]
        lws = [r["log_weight"] for r in recs] if spec.algorithm == "is" else None
        again = compute_metrics(spec, values, lws, problem)
        for key, val in entry["metrics"].items():
            if not _close(val, again.get(key)):
                problems.append(f"run {entry['run']}: metric {key} does not match samples")
    agg = aggregate(summary["per_run"])
    for key, val in summary["aggregate"].items():
        if not _close(val if not isinstance(val, dict) else [val.get("mean"), val.get("sd")],
                      agg[key] if not isinstance(agg.get(key), dict)
                      else [agg[key].get("mean"), agg[key].get("sd")]):
            problems.append(f"aggregate {key} does not match per-run metrics")
    return problems


# --- plot data -------------------------------------------------------------


def _label(summary: dict) -> str:
    return summary["spec"]["algorithm"]


def emit_plot_data(summaries: list[dict], out: Path) -> list[Path]:
    """KDE grid, LPPD curves and K-histograms as CSV files."""
    out.mkdir(parents=True, exist_ok=True)
    labels = [_label(s) for s in summaries]
    written = []

    def write(name, header, rows):
        path = out / name
        try:
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(header)
                wr.writerows(rows)
        except OSError as exc:
            raise click.ClickException(f"cannot write {path}: {exc}") from exc
        written.append(path)

    kdes = [s["aggregate"].get("kde", {}).get("mean") for s in summaries]
    have = [(lab, k) for lab, k in zip(labels, kdes) if k is not None]
    rows = [[float(x)] + [k[i] for _, k in have] for i, x in enumerate(WALK_GRID)] if have else []
    write("kde.csv", ["x"] + [lab for lab, _ in have], rows)

    for lab, s in zip(labels, summaries):
        curves = [r["metrics"]["lppd_curve"] for r in s["per_run"]
                  if "metrics" in r and "lppd_curve" in r["metrics"]]
        n_runs = len(curves)
        header = ["index"] + [f"run{r}" for r in range(n_runs)] + ["mean", "sd"]
        rows = []
        if curves:
            length = min(len(c) for c in curves)
            a = np.array([c[:length] for c in curves])
            sd = a.std(axis=0, ddof=1) if n_runs > 1 else np.zeros(length)
            for i in range(length):
                rows.append([i + 1] + a[:, i].tolist() + [float(a[:, i].mean()), float(sd[i])])
        write(f"lppd_{lab}.csv", header, rows)

    hists = [(lab, s["aggregate"].get("k_hist", {}).get("mean")) for lab, s in zip(labels, summaries)]
    hists = [(lab, h) for lab, h in hists if h is not None]
    rows = []
    if hists:
        n = len(hists[0][1])
        support = list(GEOMETRIC_SUPPORT if summaries[0]["spec"]["model"] == "geometric" else K_SUPPORT)
        keys = support + ["tail"]
        rows = [[keys[i]] + [h[i] for _, h in hists] for i in range(n)]
    write("k_hist.csv", ["k"] + [lab for lab, _ in hists], rows)
    return written


# --- command line ----------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Nonparametric HMC experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


_OVERRIDABLE = ("model", "algorithm", "samples", "burnin", "runs", "eps", "steps", "thin",
                "seed", "trim", "rmh_sigma", "data_seed", "n_train", "n_test")


@main.command()
@click.option("--model", type=click.Choice(MODELS))
@click.option("--algorithm", type=click.Choice(ALGORITHMS), default="npdhmc", show_default=True)
@click.option("--samples", type=click.IntRange(min=1), help="Samples per run, burn-in included.")
@click.option("--burnin", type=click.IntRange(min=0))
@click.option("--runs", type=click.IntRange(min=1))
@click.option("--eps", type=float, help="Leapfrog step size.")
@click.option("--steps", type=click.IntRange(min=0), help="Leapfrog steps per iteration.")
@click.option("--thin", type=click.IntRange(min=1),
              help="Thinning factor; baselines default to --steps.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--trim/--no-trim", default=True, show_default=True)
@click.option("--rmh-sigma", type=float, default=1.0, show_default=True)
@click.option("--data-seed", type=int, default=0, show_default=True)
@click.option("--n-train", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--n-test", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON file of option values; command-line flags take precedence.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.pass_context
def run(ctx, config_path, out, jobs, **opts):
    """Run an experiment and write samples.jsonl and summary.json to OUT."""
    values = {}
    if config_path is not None:
        cfg = json.loads(config_path.read_text())
        unknown = set(cfg) - set(_OVERRIDABLE)
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(cfg)
    for key, val in opts.items():
        src = ctx.get_parameter_source(key)
        if src is not None and src.name != "DEFAULT" or key not in values:
            if val is not None:
                values[key] = val
    if "model" not in values:
        raise click.UsageError("--model is required (flag or config)")
    for key, val in MODEL_DEFAULTS[values["model"]].items():
        values.setdefault(key, val)
    if "thin" not in values:
        values["thin"] = values["steps"] if values["algorithm"] in ("lmh", "rmh") else 1
    try:
        spec = ExperimentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc
    summary = run_experiment(spec, out, jobs)
    agg = summary["aggregate"]
    parts = [f"{k}={agg[k]['mean']:.4g}±{agg[k]['sd']:.2g}" for k in SCALAR_METRICS if k in agg]
    click.echo(f"{spec.model}/{spec.algorithm}: {agg['runs_ok']} runs ok, "
               f"{agg['runs_failed']} failed; " + ", ".join(parts))


@main.command()
@click.argument("out", type=click.Path(exists=True, file_okay=False, path_type=Path))
def verify(out):
    """Check that OUT/summary.json is reproducible from OUT/samples.jsonl."""
    problems = verify_report(out)
    for p in problems:
        click.echo(p, err=True)
    if problems:
        sys.exit(1)
    click.echo("ok")


@main.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
def plotdata(reports, out):
    """Write plot CSVs for one or more report directories."""
    summaries = [json.loads((r / "summary.json").read_text()) for r in reports]
    for path in emit_plot_data(summaries, out):
        click.echo(str(path))


if __name__ == "__main__":
    main()
