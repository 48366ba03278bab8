"""End-to-end acceptance checks; each test reports one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are collected in
the terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from tracehmc import diagnostics as dg
from tracehmc.baselines import importance_sample
from tracehmc.cli import ExperimentSpec, load_samples, run_experiment
from tracehmc.gradient import grad_fd, grad_potential
from tracehmc.model import run
from tracehmc.models import (
    dpmm_params,
    generate_mixture_data,
    geometric,
    geometric_pmf,
    pointwise_mixture_lik,
    random_walk,
)
from tracehmc.npdhmc import coord_integrator, npdhmc_integrate, npdhmc_step
from tracehmc.nphmc import (
    SamplerConfig,
    enphmc_step,
    hmc_integrate,
    initial_trace,
    np_integrate,
    nphmc_step,
    run_chain,
)
from tracehmc.trace import C, State, supported_prefix

from conftest import ACCEPTANCE, ScriptedRng, benchmark_models, gaussian2d, prior_only, supported_traces
from test_npdhmc import staircase, u_of
from test_nphmc import leapfrog, quartic_model

pytestmark = pytest.mark.slow

WALK_EDGES = np.linspace(0.0, 3.0, 31)


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def theta_star_lppd(n_train: int, n_test: int, seed: int = 0) -> float:
    """LPPD of the generating mixture (equal weights, true means) on the test set."""
    _, test = generate_mixture_data(n_train, n_test, seed=seed)
    k = test.k_true
    return float(pointwise_mixture_lik(test.points, test.means, np.full(k, 1.0 / k)).sum())


def test_geometric_tvd(tmp_path):
    spec = ExperimentSpec(model="geometric", steps=5, eps=0.1, samples=1000, burnin=100, runs=10)
    t0 = time.perf_counter()
    summary = run_experiment(spec, tmp_path)
    seconds = time.perf_counter() - t0
    agg = summary["aggregate"]
    assert agg["runs_failed"] == 0
    # every run keeps the same number of draws, so the mean histogram is the pooled one
    pooled = dg.Histogram(np.asarray(agg["k_hist"]["mean"]) / np.sum(agg["k_hist"]["mean"]),
                          labels=tuple(range(1, 51)) + ("tail",))
    truth = dg.pmf_histogram(lambda k: geometric_pmf(k, 0.2), range(1, 51))
    d = dg.tvd(pooled, truth)
    ok = d <= 0.05 and seconds <= 600
    report(1, "geometric TVD", ok,
           f"TVD of run-averaged histogram {d:.4f} (<= 0.05); per-run mean "
           f"{agg['tvd']['mean']:.4f}; runtime {seconds:.0f} s (<= 600)")


def test_walk_ess_and_posterior(tmp_path):
    spec = ExperimentSpec(model="walk", steps=50, eps=0.1, samples=1000, burnin=100, runs=10)
    summary = run_experiment(spec, tmp_path)
    assert summary["aggregate"]["runs_failed"] == 0
    ess = summary["aggregate"]["ess"]["mean"]
    starts = [r["value"][0] for recs in load_samples(tmp_path / "samples.jsonl").values() for r in recs]
    draws = importance_sample(random_walk(), 1_000_000, np.random.default_rng(2024))
    lw = np.array([s.log_weight for s in draws])
    w = np.exp(lw - lw.max())
    truth = dg.binned_histogram([s.value[0] for s in draws], WALK_EDGES, weights=w)
    d = dg.tvd(dg.binned_histogram(starts, WALK_EDGES), truth)
    ok = ess >= 400 and d <= 0.08
    report(2, "random-walk ESS and posterior", ok,
           f"mean ESS {ess:.1f} (>= 400); start TVD vs importance sampling {d:.4f} (<= 0.08); "
           f"importance ESS {dg.ess_weighted(w):.0f}")


def test_gmm_reduced_scale(tmp_path):
    common = dict(model="gmm", n_train=100, n_test=25, data_seed=0, runs=10,
                  samples=1000, burnin=100, steps=50, eps=0.05)
    hmc = run_experiment(ExperimentSpec(algorithm="npdhmc", **common), tmp_path / "npdhmc")
    lmh = run_experiment(ExperimentSpec(algorithm="lmh", thin=50, **common), tmp_path / "lmh")
    for s in (hmc, lmh):
        assert s["aggregate"]["runs_failed"] == 0
    modes = [r["metrics"]["k_mode"] for r in hmc["per_run"]]
    hits = sum(k == 9 for k in modes)
    l_hmc = hmc["aggregate"]["lppd"]["mean"]
    l_lmh = lmh["aggregate"]["lppd"]["mean"]
    l_star = theta_star_lppd(100, 25)
    ok = hits >= 7 and l_hmc >= l_lmh and abs(l_hmc - l_star) <= 5
    report(3, "GMM reduced scale", ok,
           f"mode K=9 in {hits}/10 runs (>= 7, modes {modes}); LPPD NP-DHMC {l_hmc:.2f} "
           f">= LMH {l_lmh:.2f}; |NP-DHMC - theta*| = {abs(l_hmc - l_star):.2f} (<= 5)")


def test_dpmm_properties(tmp_path):
    spec = ExperimentSpec(model="dpmm", n_train=100, n_test=25, data_seed=0, runs=10,
                          samples=100, burnin=50, steps=20, eps=0.05)
    summary = run_experiment(spec, tmp_path)
    assert summary["aggregate"]["runs_failed"] == 0
    bad = 0
    count = 0
    for recs in load_samples(tmp_path / "samples.jsonl").values():
        for r in recs:
            weights, _ = dpmm_params(r["value"])
            count += 1
            bad += not (weights.sum() > 0.99 and np.all((weights > 0) & (weights < 1)))
    l_dp = summary["aggregate"]["lppd"]["mean"]
    l_star = theta_star_lppd(100, 25)
    ok = count > 0 and bad == 0 and abs(l_dp - l_star) <= 10
    report(4, "DPMM properties", ok,
           f"{bad} of {count} samples violate the weight constraints; LPPD {l_dp:.2f}, "
           f"|DPMM - GMM theta*| = {abs(l_dp - l_star):.2f} (<= 10)")


def test_reference_equivalence():
    worst = 0.0
    same_len = True
    for m, steps in [(geometric(0.2), 5), (random_walk(), 10)]:
        for base in (True, False):
            cfg = SamplerConfig(epsilon=0.1, steps=steps, trim=False, base_in_potential=base)
            q = initial_trace(m, np.random.default_rng(0))
            for k in range(100):
                a = nphmc_step(q, m, cfg, np.random.default_rng(1000 + k)).trace
                b = enphmc_step(State(q, np.zeros_like(q)), m, cfg, np.random.default_rng(1000 + k)).q
                b = supported_prefix(b, m)
                if len(a) != len(b):
                    same_len = False
                    break
                worst = max(worst, float(np.max(np.abs(a - b))))
                q = a
    ok = same_len and worst <= 1e-9
    report(5, "NP-HMC equals the extended-state reference", ok,
           f"lengths agree: {same_len}; max coordinate gap {worst:.2e} (<= 1e-9)")


def test_fixed_dimension_reduction():
    m = gaussian2d()
    mu = np.array([0.5, -0.3])
    cov = np.array([[1.0, 0.4], [0.4, 0.6]])
    prec = np.linalg.inv(cov)
    cfg = SamplerConfig(epsilon=0.15, steps=8)
    q_np = q_ref = np.zeros(2)
    r_np, r_ref = np.random.default_rng(4), np.random.default_rng(4)
    gap = 0.0
    for _ in range(200):
        q_np = nphmc_step(q_np, m, cfg, r_np).trace
        p0 = r_ref.standard_normal(2)
        q1, p1 = leapfrog(q_ref, p0, lambda q: prec @ (q - mu), 0.15, 8)
        h0 = 0.5 * (q_ref - mu) @ prec @ (q_ref - mu) + 0.5 * p0 @ p0
        h1 = 0.5 * (q1 - mu) @ prec @ (q1 - mu) + 0.5 * p1 @ p1
        u = r_ref.random()
        if u > 0 and math.log(u) < min(0.0, h0 - h1):
            q_ref = q1
        gap = max(gap, float(np.max(np.abs(q_np - q_ref))))
    chain = run_chain(m, SamplerConfig(epsilon=0.3, steps=8, n_samples=20_500, burn_in=500, seed=11))
    xs = np.array([c.value for c in chain])
    mean_err = float(np.max(np.abs(xs.mean(axis=0) - mu)))
    var_err = float(np.max(np.abs(xs.var(axis=0) / np.diag(cov) - 1.0)))
    ok = gap <= 1e-12 and len(xs) == 20_000 and mean_err <= 0.05 and var_err <= 0.10
    report(6, "fixed-dimension reduction", ok,
           f"max gap to textbook HMC {gap:.1e} (<= 1e-12); mean error {mean_err:.4f} (<= 0.05); "
           f"relative variance error {var_err:.3f} (<= 0.10)")


def test_integrator_properties():
    r = np.random.default_rng(0)
    m4 = quartic_model(4)
    cfg = SamplerConfig(epsilon=0.05, steps=20)
    rev = 0.0
    for _ in range(10):
        s = State(r.standard_normal(4), r.standard_normal(4))
        back = hmc_integrate(hmc_integrate(s, m4, cfg), m4, cfg)
        rev = max(rev, float(np.max(np.abs(np.concatenate([back.q - s.q, back.p - s.p])))))
    det_err = 0.0
    for n in (2, 4):
        m = quartic_model(n)
        one = SamplerConfig(epsilon=0.3, steps=1)

        def flow(z):
            out = hmc_integrate(State(z[:n], z[n:]), m, one)
            return np.concatenate([out.q, -out.p])

        h = 1e-6
        for _ in range(5):
            z = r.standard_normal(2 * n)
            jac = np.column_stack([(flow(z + h * e) - flow(z - h * e)) / (2 * h) for e in np.eye(2 * n)])
            det_err = max(det_err, abs(float(np.linalg.det(jac)) - 1.0))
    eps = 0.01
    osc = SamplerConfig(epsilon=eps, steps=round(math.pi / eps))
    flip = 0.0
    for q0 in (0.5, -1.2, 2.0):
        prop, _ = np_integrate(State(np.array([q0]), np.array([0.0])), prior_only(1), osc, ScriptedRng())
        flip = max(flip, abs(prop.q[0] + q0))
    ok = rev <= 1e-8 and det_err <= 1e-6 and flip <= 0.05
    report(7, "integrator properties", ok,
           f"reversibility {rev:.1e} (<= 1e-8); |det J - 1| {det_err:.1e} (<= 1e-6); "
           f"harmonic |q_L + q0| {flip:.4f} (<= 0.05)")


def _fd_errors(m, traces):
    for q in traces:
        ga, gf = grad_potential(m, q), grad_fd(m, q, h=1e-5)
        for i in np.flatnonzero(gf.continuous):
            yield abs(ga.partials[i] - gf.partials[i]) / max(1.0, abs(gf.partials[i]))


def test_gradient_correctness():
    models = benchmark_models()
    # the benchmark tagging leaves geometric and walk without continuous sites
    models["geometric/C"] = geometric(0.2, kind=C)
    models["walk/C"] = random_walk(start_kind=C, step_kind=C)
    parts = []
    ok = True
    for name, m in models.items():
        traces = supported_traces(m, 100, seed=13)
        errs = list(_fd_errors(m, traces))
        worst = max(errs, default=0.0)
        ok &= len(traces) >= 100 and worst <= 1e-4
        parts.append(f"{name} {worst:.1e} over {len(errs)} partials")
    report(8, "gradient correctness", ok, "; ".join(parts) + " (<= 1e-4)")


def test_prefix_property():
    parts = []
    ok = True
    r = np.random.default_rng(3)
    for name, m in benchmark_models().items():
        traces = supported_traces(m, 500, seed=21)
        traces += [np.concatenate([q, r.standard_normal(int(r.integers(1, 4)))]) for q in traces[:250]]
        traces += [r.standard_normal(int(r.integers(1, 40))) for _ in range(250)]
        violations = 0
        for q in traces:
            positive = [k for k in range(1, len(q) + 1) if run(m, q[:k]).density_log_weight > -math.inf]
            violations += len(positive) > 1
        ok &= len(traces) >= 1000 and violations == 0
        parts.append(f"{name} {violations}/{len(traces)}")
    report(9, "prefix property", ok, "violations " + ", ".join(parts))


def test_coordinate_integrator():
    m = staircase(3)
    drift = 0.0
    for base in (False, True):
        r = np.random.default_rng(5)
        cfg = SamplerConfig(epsilon=0.37, trim=False, base_in_potential=base)
        for _ in range(300):
            q, p = r.standard_normal(3), r.laplace(size=3) * 2
            s = State(q, p)
            cur, _ = coord_integrator(s, s, int(r.integers(3)), 0.0, 0.37, m, r, cfg)
            before = u_of(m, q, base) + np.abs(p).sum()
            after = u_of(m, cur.q, base) + np.abs(cur.p).sum()
            drift = max(drift, abs(after - before))
    g = gaussian2d()
    cfg = SamplerConfig(epsilon=0.2, steps=7, step_jitter=0.0)
    s = State(np.array([0.3, -0.8]), np.array([1.1, 0.2]))
    a, _, _ = npdhmc_integrate(s, g, cfg, np.random.default_rng(2))
    b, _ = np_integrate(s, g, cfg, np.random.default_rng(2))
    same = np.array_equal(a.q, b.q) and np.array_equal(a.p, b.p)
    q1 = q2 = np.zeros(2)
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    for _ in range(30):
        q1 = npdhmc_step(q1, g, cfg, r1).trace
        q2 = nphmc_step(q2, g, cfg, r2).trace
        same &= np.array_equal(q1, q2)
    ok = drift <= 1e-10 and bool(same)
    report(10, "coordinate integrator", ok,
           f"max energy drift {drift:.1e} (<= 1e-10); no-discontinuity run identical to NP-HMC: {bool(same)}")
