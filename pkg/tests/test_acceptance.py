"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and shown in pytest's terminal summary.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from probcert.driver import (
    CertificationRequest,
    certify_input,
    check_report,
    inputs_from_dir,
    resampling_trials,
    run_batch,
)
from probcert.network import InputSpec, Network
from probcert.oracle import attack_search, mc_probability
from probcert.probabilistic import (
    NoiseModel,
    clip_to_support,
    convolution_bounds,
    gaussian_bounds,
    hoeffding_bounds,
    hoeffding_lower,
    theorem_sandwich,
    weighted_uniform_sum_cdf,
)
from probcert.relaxation import MarginLinearBounds, compute_margin_bounds, margin_bounds_all
from probcert.worst_case import certify_worst_case

from conftest import (
    ACCEPTANCE_LINES,
    SYNTHETIC_INPUTS,
    SYNTHETIC_MODEL,
    random_anchor,
    random_net,
)

ACTIVATIONS = ["relu", "tanh", "sigmoid", "arctan", "identity"]
MC_SAMPLES = 1_000_000


def _record(n, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} ({name}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _tiny_net(i):
    rng = np.random.default_rng(1000 + i)
    n_in = int(rng.integers(2, 7))
    hidden = [int(rng.integers(4, 21)) for _ in range(int(rng.integers(1, 3)))]
    n_out = int(rng.integers(2, 5))
    net = random_net(1000 + i, n_in, hidden, n_out, act=ACTIVATIONS[i % len(ACTIVATIONS)])
    return net, random_anchor(net, 2000 + i), rng


def test_criterion_1_sandwich_soundness():
    start = time.perf_counter()
    violations, checks = [], 0
    for i in range(50):
        net, x0, rng = _tiny_net(i)
        spec = InputSpec.build(net, x0)
        t = spec.targets[int(rng.integers(len(spec.targets)))]
        single = InputSpec(spec.x0, 0.0, spec.p, spec.c, (t,))
        eps_w = certify_worst_case(net, single).epsilon_certified
        # beyond the worst-case radius the probabilities are informative
        eps = min(2.5 * eps_w, 1.0)
        mlb = compute_margin_bounds(net, single.with_epsilon(eps), t)

        bounded = NoiseModel.bounded(x0, eps)
        est = mc_probability(net, x0, bounded, spec.c, t, n_samples=MC_SAMPLES, seed=i)
        h = hoeffding_bounds(mlb, x0, eps)
        c = convolution_bounds(mlb, x0, eps, truncate=True)
        certs = {
            "hoeffding": h,
            "hoeffding+support": clip_to_support(h, mlb, eps),
            "convolution": c,
            "convolution+hoeffding": theorem_sandwich(c, h),
        }
        for name, cert in certs.items():
            checks += 1
            se3 = 3 * est.std_error
            if not cert.gamma_L - se3 <= est.p_hat <= cert.gamma_U + se3:
                violations.append((i, name, cert.gamma_L, est.p_hat, cert.gamma_U))

        gauss = NoiseModel.isotropic_gaussian(x0, eps)
        est_g = mc_probability(net, x0, gauss, spec.c, t, n_samples=MC_SAMPLES, seed=10_000 + i)
        g = gaussian_bounds(mlb, x0, gauss.covariance, epsilon=eps)
        checks += 1
        tol = 3 * est_g.std_error + 0.003
        if not g.gamma_L - tol <= est_g.p_hat <= g.gamma_U + tol:
            violations.append((i, "gaussian", g.gamma_L, est_g.p_hat, g.gamma_U))
    elapsed = time.perf_counter() - start
    ok = not violations and elapsed <= 600
    _record(1, "sandwich soundness", ok,
            f"{checks} certificate checks on 50 networks, {len(violations)} violations, {elapsed:.0f}s"
            + (f"; first: {violations[0]}" if violations else ""))


def test_criterion_2_worst_case_soundness(synthetic_net):
    start = time.perf_counter()
    fixtures = []
    for i in range(20):
        net, x0, _ = _tiny_net(i)
        fixtures.append((f"tiny{i}", net, InputSpec.build(net, x0)))
    for path in inputs_from_dir(SYNTHETIC_INPUTS)[:3]:
        x0 = np.asarray(json.loads(open(path).read())["x0"])
        fixtures.append((path.rsplit("/", 1)[-1], synthetic_net, InputSpec.build(synthetic_net, x0)))

    unsound, broken_at_double = [], 0
    for name, net, spec in fixtures:
        eps = certify_worst_case(net, spec).epsilon_certified
        for seed in range(100):
            if attack_search(net, spec, eps, n_random=1000, seed=seed) is not None:
                unsound.append((name, eps, seed))
                break
        if any(attack_search(net, spec, 2 * eps, n_random=1000, seed=s) is not None for s in range(100)):
            broken_at_double += 1
    elapsed = time.perf_counter() - start
    ok = not unsound and broken_at_double >= 1 and elapsed <= 300
    _record(2, "worst-case soundness", ok,
            f"{len(fixtures)} fixtures x 100 seeds: {len(unsound)} adversarial points at the certified radius, "
            f"{broken_at_double} fixtures broken at twice the radius, {elapsed:.0f}s")


def test_criterion_3_affine_exactness():
    worst_gap, worst_rel = 0.0, 0.0
    for i in range(6):
        rng = np.random.default_rng(300 + i)
        dims = [int(rng.integers(2, 8)) for _ in range(int(rng.integers(2, 4)))] + [int(rng.integers(2, 5))]
        ws = [rng.normal(size=(b, a)) for a, b in zip(dims[:-1], dims[1:])]
        bs = [rng.normal(size=b) for b in dims[1:]]
        net = Network.from_arrays(ws, bs, ["identity"] * len(ws))
        x0 = random_anchor(net, i)
        cov = np.diag(rng.uniform(0.01, 0.05, dims[0]) ** 2)
        spec = InputSpec.build(net, x0, epsilon=0.1)
        for t, mlb in margin_bounds_all(net, spec).items():
            for a in (0.0, float(rng.normal())):
                g = gaussian_bounds(mlb, x0, cov, a)
                worst_gap = max(worst_gap, abs(g.gamma_L - g.gamma_U))
        for p, q in [(math.inf, 1), (2, 2), (1, math.inf)]:
            s = InputSpec.build(net, x0, p=p)
            analytic = min(
                (mlb.A_L @ x0 + mlb.d_L) / np.linalg.norm(mlb.A_L, ord=q)
                for mlb in margin_bounds_all(net, s).values()
            )
            r = certify_worst_case(net, s, eps_max=10 * analytic, tol=1e-4).epsilon_certified
            worst_rel = max(worst_rel, abs(r - analytic) / analytic)
    ok = worst_gap <= 1e-12 and worst_rel <= 1e-4
    _record(3, "affine exactness", ok,
            f"max |gamma_L - gamma_U| = {worst_gap:.1e}, max relative radius error = {worst_rel:.1e}")


def test_criterion_4_formula_fidelity():
    errs = {
        "hoeffding at mu=a": abs(hoeffding_lower(0.3, 0.3, 1.0, 1.0) - 0.0),
        "hoeffding 1-e^-2": abs(hoeffding_lower(2.0, 0.0, 1.0, 1.0) - (1 - math.exp(-2))),
    }
    unit = MarginLinearBounds(1, np.array([1.0]), np.array([1.0]), 0.0, 0.0)
    errs["gaussian at a=mu"] = abs(gaussian_bounds(unit, [0.4], [[0.01]], a=0.4).gamma_L - 0.5)
    errs["gaussian Phi(1)"] = abs(gaussian_bounds(unit, [0.4], [[0.01]], a=0.3).gamma_L - stats.norm.cdf(1.0))
    table_err = abs(hoeffding_lower(2.0, 0.0, 1.0, 1.0) - 0.864665) < 5e-7 and \
        abs(gaussian_bounds(unit, [0.4], [[0.01]], a=0.3).gamma_L - 0.841345) < 5e-7
    worst = max(errs.values())
    _record(4, "formula fidelity", worst <= 1e-9 and table_err,
            f"max deviation {worst:.1e} over {len(errs)} closed-form values; 6-digit table values match")


def _irwin_hall_cdf(x, n):
    k = np.arange(n + 1)
    coef = (-1.0) ** k * np.array([math.comb(n, int(j)) for j in k]) / math.factorial(n)
    return np.array([np.sum(coef * np.clip(v - k, 0, None) ** n) for v in x])


def test_criterion_5_convolution_accuracy():
    cdf = weighted_uniform_sum_cdf([0.5, 0.5, 0.5], grid_points=2**14)
    z = np.linspace(-1.6, 1.6, 4001)
    sup = float(np.max(np.abs(cdf(z) - _irwin_hall_cdf(z + 1.5, 3))))

    shortfalls = []
    for i in range(100):
        net, x0, rng = _tiny_net(100 + i)
        spec = InputSpec.build(net, x0)
        t = spec.targets[0]
        eps = float(rng.uniform(0.05, 0.6))
        mlb = compute_margin_bounds(net, spec.with_epsilon(eps), t)
        h = hoeffding_bounds(mlb, x0, eps).gamma_L
        c = convolution_bounds(mlb, x0, eps, truncate=True).gamma_L
        cl = weighted_uniform_sum_cdf(mlb.A_L * eps, truncate=True)
        z0 = -(mlb.A_L @ x0 + mlb.d_L) + cl.slack
        one_cell = float(cl(z0 + cl.cell) - cl(z0))
        if c + one_cell < h - 1e-12:
            shortfalls.append((i, c, h))
    ok = sup < 1e-4 and not shortfalls
    _record(5, "convolution accuracy", ok,
            f"Irwin-Hall sup error {sup:.1e}; convolution below Hoeffding on {len(shortfalls)}/100 instances")


@pytest.fixture(scope="module")
def synthetic_reports():
    inputs = inputs_from_dir(SYNTHETIC_INPUTS)[:10]
    reports = {}
    start = time.perf_counter()
    for mode in ("fastlin", "adaptive"):
        reports[mode] = run_batch(CertificationRequest(model=str(SYNTHETIC_MODEL), inputs=inputs, mode=mode))
    reports["elapsed"] = time.perf_counter() - start
    return reports


def test_criterion_6_proven_radius_gain(synthetic_reports):
    rows = {m: [r for r in synthetic_reports[m]["inputs"] if r["status"] == "ok"] for m in ("fastlin", "adaptive")}
    gain = {m: float(np.mean([r["eps_proven"]["0.9999"] - r["eps_worst_case"] for r in rows[m]]))
            for m in rows}
    imp = {m: float(np.mean([r["improvement_percent"] for r in rows[m]])) for m in rows}
    elapsed = synthetic_reports["elapsed"]
    ok = (len(rows["adaptive"]) == 10 and gain["adaptive"] > 0 and imp["adaptive"] > imp["fastlin"]
          and elapsed <= 900)
    _record(6, "proven radius gain on a trained classifier", ok,
            f"adaptive mean eps gain {gain['adaptive']:.4f}, improvement {imp['adaptive']:.1f}% "
            f"vs fastlin {imp['fastlin']:.1f}% on 10 inputs, {elapsed:.0f}s")


def test_criterion_7_monotonicity(synthetic_reports, synthetic_net, synthetic_pool):
    inputs = inputs_from_dir(SYNTHETIC_INPUTS)[:5]
    extra = [
        run_batch(CertificationRequest(model=str(SYNTHETIC_MODEL), inputs=inputs, noise="gaussian")),
        run_batch(CertificationRequest(model=str(SYNTHETIC_MODEL), inputs=inputs, method="convolution",
                                       aggregation="union")),
        run_batch(CertificationRequest(model=str(SYNTHETIC_MODEL), inputs=inputs, norm=2, target_policy="random")),
    ]
    reports = [synthetic_reports["fastlin"], synthetic_reports["adaptive"], *extra]
    problems = [p for rep in reports for p in check_report(rep)]

    xs, _ = synthetic_pool
    req = CertificationRequest(model=synthetic_net, confidences=(0.9999,))
    values = []
    for i, x0 in enumerate(xs):
        row = certify_input(synthetic_net, x0, req, i)
        values.append([row["eps_worst_case"], row["eps_proven"]["0.9999"], row["improvement_percent"]])
    trials = resampling_trials(np.array(values), (10, 50), n_trials=100, seed=0)
    shrinks = bool(np.all(trials[50]["std"] < trials[10]["std"]))
    ok = not problems and shrinks
    _record(7, "monotonicity suite", ok,
            f"{len(reports)} reports, {len(problems)} violations; std of batch means 10->50: "
            + ", ".join(f"{a:.4f}->{b:.4f}" for a, b in zip(trials[10]["std"], trials[50]["std"])))


def test_criterion_8_determinism(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"report_{k}.json"
        cmd = [sys.executable, "-m", "probcert", "--model", str(SYNTHETIC_MODEL),
               "--inputs", str(SYNTHETIC_INPUTS), "--targets", "random", "--seed", "17",
               "--validate-mc", "5000", "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(out.read_bytes())
    _record(8, "determinism", outs[0] == outs[1],
            f"two CLI runs produced {'identical' if outs[0] == outs[1] else 'different'} "
            f"{len(outs[0])}-byte reports")
