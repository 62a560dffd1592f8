"""Batch certification: worst-case and probabilistic radii per input, plus reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .network import InputSpec, Network, load_input, load_network, parse_norm
from .oracle import mc_probability, stream_rng
from .probabilistic import (
    DEFAULT_GRID_POINTS,
    Method,
    NoiseKind,
    NoiseModel,
    convert_norm_certificate,
    probabilistic_bounds,
)
from .relaxation import Mode, compute_preactivation_bounds, margin_bounds_all
from .worst_case import DEFAULT_EPS_MAX, DEFAULT_TOL, bisect_radius, certify_worst_case

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCES = (0.9999, 0.75, 0.50, 0.25, 0.05)
VERIFY_POINTS = 8
MAX_REFINES = 3


class Aggregation(str, Enum):
    MIN_GAMMA = "min"
    UNION_BOUND = "union"


def aggregate_targets(gammas: Sequence[float], policy=Aggregation.MIN_GAMMA) -> float:
    """Combine per-target confidences.

    ``min``: every target individually holds with the smallest confidence.
    ``union``: all targets hold simultaneously, by Boole's inequality.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("no per-target confidences to aggregate")
    if Aggregation(policy) is Aggregation.MIN_GAMMA:
        return min(gammas)
    return max(0.0, 1.0 - sum(1.0 - g for g in gammas))


def scale_covariance(base, epsilon: float) -> np.ndarray:
    """Scale ``base`` so its largest marginal std equals ``epsilon / 3``."""
    base = np.asarray(base, dtype=np.float64)
    full = np.diag(base) if base.ndim == 1 else base
    peak = float(np.max(np.diag(full)))
    if peak <= 0:
        raise ValueError("base covariance has no positive variance")
    return full * ((epsilon / 3.0) ** 2 / peak)


def noise_at(kind, x0, epsilon: float, base_covariance=None) -> NoiseModel:
    """Noise coupled to the probed radius: half-width ``epsilon`` or std ``epsilon / 3``."""
    if NoiseKind(kind) is NoiseKind.BOUNDED:
        return NoiseModel.bounded(x0, epsilon)
    if base_covariance is None:
        return NoiseModel.isotropic_gaussian(x0, epsilon)
    return NoiseModel.gaussian(x0, scale_covariance(base_covariance, epsilon), epsilon)


def _default_method(noise) -> Method:
    return Method.GAUSSIAN if NoiseKind(noise) is NoiseKind.GAUSSIAN else Method.HOEFFDING


def target_confidences(net: Network, spec: InputSpec, epsilon: float, noise=NoiseKind.BOUNDED,
                       method=None, mode=Mode.ADAPTIVE, base_covariance=None,
                       grid_points: int = DEFAULT_GRID_POINTS, support_clip: bool = True) -> dict[int, float]:
    """``gamma_L`` of ``P[f_c - f_t > 0]`` per target, with bounds on the l-inf ball of radius ``epsilon``."""
    if epsilon == 0:
        return {t: 1.0 for t in spec.targets}
    method = Method(method) if method is not None else _default_method(noise)
    s = InputSpec(spec.x0, float(epsilon), math.inf, spec.c, spec.targets)
    mlbs = margin_bounds_all(net, s, mode)
    nz = noise_at(noise, spec.x0, epsilon, base_covariance)
    return {
        t: probabilistic_bounds(m, nz, method, 0.0, grid_points, support_clip, truncate=True).gamma_L
        for t, m in mlbs.items()
    }


@dataclass
class RadiusResult:
    epsilon: float
    notes: list[str] = field(default_factory=list)


def search_proven_radius(net: Network, spec: InputSpec, gamma: float, noise=NoiseKind.BOUNDED,
                         method=None, mode=Mode.ADAPTIVE, eps_max: float = DEFAULT_EPS_MAX,
                         tol: float = DEFAULT_TOL, aggregation=Aggregation.MIN_GAMMA,
                         base_covariance=None, grid_points: int = DEFAULT_GRID_POINTS,
                         support_clip: bool = True) -> RadiusResult:
    """Bisection for the largest l-inf radius whose aggregated ``gamma_L`` reaches ``gamma``.

    The predicate is treated as monotone; afterwards it is re-checked at
    ``VERIFY_POINTS`` radii below the answer and the search is repeated below
    the first failure.
    """
    if not 0 < gamma <= 1:
        raise ValueError("confidence must lie in (0, 1]")
    notes = []

    def ok(eps):
        g = target_confidences(net, spec, eps, noise, method, mode, base_covariance,
                               grid_points, support_clip)
        return aggregate_targets(list(g.values()), aggregation) >= gamma

    top = float(eps_max)
    eps = 0.0
    for _ in range(MAX_REFINES + 1):
        eps = bisect_radius(ok, top, tol)
        if eps == 0:
            break
        failed = [e for e in eps * np.arange(1, VERIFY_POINTS + 1) / (VERIFY_POINTS + 1) if not ok(e)]
        if not ok(eps):
            failed.append(eps)
        if not failed:
            break
        top = float(min(failed))
        notes.append(f"non-monotone certificate predicate below {eps:.6g}; re-searched below {top:.6g}")
    else:
        eps = 0.0
        notes.append("verification sweep kept failing; returning 0")
    if eps == 0:
        notes.append(f"confidence {gamma} not reached at any positive radius")
        if gamma >= 1.0 and not support_clip:
            notes.append("confidence 1 is only attainable through the worst-case bound")
    for n in notes:
        log.warning(n)
    return RadiusResult(eps, notes)


def certify_proven_radius(net: Network, spec: InputSpec, noise=NoiseKind.BOUNDED, method=None,
                          gamma: float = 0.9999, eps_max: float = DEFAULT_EPS_MAX,
                          tol: float = DEFAULT_TOL, mode=Mode.ADAPTIVE, **kwargs) -> float:
    """Largest radius certified with confidence at least ``gamma``, in ``spec.p``.

    Probabilistic certificates live on the l-inf ball; for ``p`` in ``{1, 2}``
    the l-inf radius is converted by ball containment.
    """
    r = search_proven_radius(net, spec, gamma, noise, method, mode, eps_max, tol, **kwargs).epsilon
    if math.isinf(spec.p):
        return r
    return convert_norm_certificate(r, spec.p, net.input_dim)


# ------------------------------------------------------------------ requests


class TargetPolicy(str, Enum):
    ALL = "all"
    RANDOM = "random"
    EXPLICIT = "explicit"


@dataclass
class CertificationRequest:
    model: str | Network
    inputs: list = field(default_factory=list)
    norm: float = math.inf
    mode: Mode = Mode.ADAPTIVE
    noise: NoiseKind = NoiseKind.BOUNDED
    method: Method | None = None
    covariance: np.ndarray | str | None = None
    confidences: tuple[float, ...] = DEFAULT_CONFIDENCES
    target_policy: TargetPolicy = TargetPolicy.ALL
    explicit_targets: tuple[int, ...] = ()
    aggregation: Aggregation = Aggregation.MIN_GAMMA
    eps_max: float = DEFAULT_EPS_MAX
    tol: float = DEFAULT_TOL
    seed: int = 0
    grid_points: int = DEFAULT_GRID_POINTS
    validate_mc: int = 0
    jobs: int = 1
    dump_bounds: str | None = None

    def __post_init__(self):
        self.norm = parse_norm(self.norm)
        self.mode = Mode(self.mode)
        self.noise = NoiseKind(self.noise)
        self.method = Method(self.method) if self.method is not None else _default_method(self.noise)
        if (self.method is Method.GAUSSIAN) != (self.noise is NoiseKind.GAUSSIAN):
            raise ValueError(f"method {self.method.value} does not match noise {self.noise.value}")
        self.target_policy = TargetPolicy(self.target_policy)
        self.aggregation = Aggregation(self.aggregation)
        confs = sorted({float(g) for g in self.confidences}, reverse=True)
        if not confs or any(not 0 < g <= 1 for g in confs):
            raise ValueError("confidences must lie in (0, 1]")
        self.confidences = tuple(confs)
        if self.target_policy is TargetPolicy.EXPLICIT and not self.explicit_targets:
            raise ValueError("explicit target policy needs a target list")

    def provenance(self) -> dict:
        prov = {
            "version": __version__,
            "norm": norm_label(self.norm),
            "mode": self.mode.value,
            "noise": self.noise.value,
            "method": self.method.value,
            "confidences": list(self.confidences),
            "target_policy": self.target_policy.value,
            "explicit_targets": list(self.explicit_targets),
            "aggregation": self.aggregation.value,
            "eps_max": self.eps_max,
            "tolerance": self.tol,
            "seed": self.seed,
            "grid_points": self.grid_points,
            "validate_mc": self.validate_mc,
            "probabilistic_ball": "inf",
        }
        if self.noise is NoiseKind.BOUNDED:
            prov["assumptions"] = [
                "bounded noise: independent coordinates, uniform on [x0 - eps, x0 + eps] "
                "(uniform pdf assumed for the convolution method; the concentration bound "
                "only uses boundedness and symmetry)",
                "where the lower margin bound is positive on the whole box its probability is taken as 1",
            ]
        else:
            prov["assumptions"] = [
                "gaussian noise N(x0, Sigma) with max sqrt(Sigma_ii) = eps/3; the affine margin "
                "bounds are only proven on the ball, which holds about 99.7% of each marginal",
            ]
            prov["covariance"] = "isotropic" if self.covariance is None else "file"
        return prov


def norm_label(p: float):
    return "inf" if math.isinf(p) else int(p)


def improvement_percent(eps_worst_case: float, eps_proven: float) -> float | None:
    """Relative gain of the probabilistic radius over the worst-case one, in percent."""
    if eps_worst_case <= 0:
        return None
    return (eps_proven - eps_worst_case) / eps_worst_case * 100.0


def _conf_key(g: float) -> str:
    return repr(float(g))


def _select_targets(req: CertificationRequest, net: Network, c: int, index: int):
    others = [t for t in range(net.output_dim) if t != c]
    if req.target_policy is TargetPolicy.ALL:
        return tuple(others)
    if req.target_policy is TargetPolicy.RANDOM:
        rng = stream_rng(req.seed, 1_000_000 + index)
        return (int(rng.choice(others)),)
    chosen = tuple(t for t in req.explicit_targets if t != c)
    if not chosen:
        raise ValueError(f"explicit targets {list(req.explicit_targets)} all equal the predicted class")
    return chosen


def load_covariance(path) -> np.ndarray:
    """Covariance file: ``{"diag": [...]}`` or ``{"full": [[...]]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "diag" in data:
        return np.asarray(data["diag"], dtype=np.float64)
    if "full" in data:
        return np.asarray(data["full"], dtype=np.float64)
    raise ValueError(f"{path}: covariance file needs 'diag' or 'full'")


def certify_input(net: Network, x0, req: CertificationRequest, index: int = 0,
                  label: int | None = None, source: str | None = None) -> dict:
    """Certify one input; returns the report row (never raises for input-level failures)."""
    row = {"index": index, "source": source if source is not None else f"input[{index}]", "label": label}
    try:
        spec0 = InputSpec.build(net, x0, 0.0, req.norm)
        targets = _select_targets(req, net, spec0.c, index)
        spec = InputSpec(spec0.x0, 0.0, req.norm, spec0.c, targets)
        row["predicted_class"] = spec.c
        row["targets"] = list(targets)
        wc = certify_worst_case(net, spec, req.mode, req.eps_max, req.tol)
        row["eps_worst_case"] = wc.epsilon_certified
        row["eps_worst_case_per_target"] = {str(t): e for t, e in sorted(wc.per_target_epsilon.items())}

        cov = req.covariance
        if isinstance(cov, (str, Path)):
            cov = load_covariance(cov)
        proven, notes = {}, []
        for g in req.confidences:
            res = search_proven_radius(
                net, spec, g, req.noise, req.method, req.mode, req.eps_max, req.tol,
                req.aggregation, cov, req.grid_points,
            )
            eps = res.epsilon
            if not math.isinf(req.norm):
                eps = convert_norm_certificate(eps, req.norm, net.input_dim)
            proven[_conf_key(g)] = eps
            notes.extend(f"gamma={g}: {n}" for n in res.notes)
        row["eps_proven"] = proven
        w = wc.epsilon_certified
        row["improvement_percent"] = improvement_percent(w, proven[_conf_key(req.confidences[0])])
        if notes:
            row["notes"] = notes

        if req.validate_mc:
            row["validation"] = _validate(net, spec, proven, req, cov, index)
        if req.dump_bounds:
            _dump_bounds(net, spec, w, req, index)
        row["status"] = "ok"
    except Exception as exc:  # recorded per input, batch continues
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _validate(net, spec, proven, req, cov, index) -> dict:
    out = {}
    for k, (key, eps) in enumerate(proven.items()):
        if eps <= 0 or not math.isinf(req.norm):
            continue
        gamma = float(key)
        nz = noise_at(req.noise, spec.x0, eps, cov)
        checks = {}
        for t in spec.targets:
            est = mc_probability(net, spec.x0, nz, spec.c, t, 0.0, req.validate_mc,
                                 seed=req.seed + 7919 * (index + 1) + 104729 * k + t)
            d = est.to_dict()
            slack = 0.003 if req.noise is NoiseKind.GAUSSIAN else 0.0
            d["consistent"] = est.p_hat + 3 * est.std_error + slack >= gamma
            checks[str(t)] = d
        out[key] = checks
    return out


def _dump_bounds(net, spec, eps, req, index):
    pre = compute_preactivation_bounds(net, spec.with_epsilon(eps), req.mode)
    path = Path(req.dump_bounds)
    path.mkdir(parents=True, exist_ok=True)
    data = {"index": index, "epsilon": eps, "norm": norm_label(spec.p), **pre.to_dict()}
    (path / f"bounds_{index:04d}.json").write_text(json.dumps(data, sort_keys=True), encoding="utf-8")


# ------------------------------------------------------------------- batches


def _summary(rows: list[dict], confidences) -> dict:
    ok = [r for r in rows if r.get("status") == "ok"]
    cols = {"eps_worst_case": [r["eps_worst_case"] for r in ok]}
    for g in confidences:
        cols[f"eps_proven@{_conf_key(g)}"] = [r["eps_proven"][_conf_key(g)] for r in ok]
    cols["improvement_percent"] = [r["improvement_percent"] for r in ok if r["improvement_percent"] is not None]
    out = {"n_ok": len(ok), "n_failed": len(rows) - len(ok)}
    for name, vals in cols.items():
        arr = np.asarray(vals, dtype=np.float64)
        out[name] = {
            "mean": float(arr.mean()) if arr.size else None,
            "std": float(arr.std()) if arr.size else None,
        }
    return out


def _work(args):
    net, x0, req, index, label, source = args
    return certify_input(net, x0, req, index, label, source)


def run_batch(req: CertificationRequest) -> dict:
    """Certify every input of ``req`` and assemble the report (deterministic given the seed)."""
    net = req.model if isinstance(req.model, Network) else load_network(req.model)
    jobs = []
    for i, item in enumerate(req.inputs):
        if isinstance(item, (str, Path)):
            try:
                x0, label = load_input(item)
            except Exception as exc:
                jobs.append((None, str(item), exc, i))
                continue
            jobs.append(((net, x0, req, i, label, str(item)), None, None, i))
        else:
            jobs.append(((net, np.asarray(item, dtype=np.float64), req, i, None, None), None, None, i))

    todo = [j[0] for j in jobs if j[0] is not None]
    if req.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            done = list(pool.map(_work, todo))
    else:
        done = [_work(a) for a in todo]
    results = iter(done)
    rows = []
    for args, source, exc, i in jobs:
        if args is None:
            rows.append({"index": i, "source": source, "status": "error",
                         "error": f"{type(exc).__name__}: {exc}"})
        else:
            rows.append(next(results))

    model_name = str(req.model) if not isinstance(req.model, Network) else "<in-memory>"
    return {
        "model": model_name,
        "provenance": req.provenance(),
        "inputs": rows,
        "summary": _summary(rows, req.confidences),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_csv(report: dict) -> str:
    """One row per input and one column per confidence, then mean and std rows."""
    confs = report["provenance"]["confidences"]
    header = (["index", "source", "predicted_class", "eps_worst_case"]
              + [f"eps_proven@{_conf_key(g)}" for g in confs] + ["improvement_percent", "status"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in report["inputs"]:
        ok = r.get("status") == "ok"
        w.writerow(
            [r["index"], r.get("source"), r.get("predicted_class", ""),
             r["eps_worst_case"] if ok else ""]
            + [r["eps_proven"][_conf_key(g)] if ok else "" for g in confs]
            + [r.get("improvement_percent", "") if ok else "", r["status"]]
        )
    s = report["summary"]
    cols = ["eps_worst_case"] + [f"eps_proven@{_conf_key(g)}" for g in confs] + ["improvement_percent"]
    for stat in ("mean", "std"):
        w.writerow([stat, "", ""] + [s[c][stat] for c in cols] + [""])
    return buf.getvalue()


def check_report(report: dict, tol: float | None = None) -> list[str]:
    """Violations of the report invariants (empty when the report is consistent).

    Along each row the proven radius must not grow with confidence, and for
    l-inf reports it must not fall below the worst-case radius.
    """
    prov = report["provenance"]
    tol = prov["tolerance"] if tol is None else tol
    confs = sorted(prov["confidences"], reverse=True)
    problems = []
    for r in report["inputs"]:
        if r.get("status") != "ok":
            continue
        vals = [r["eps_proven"][_conf_key(g)] for g in confs]
        slack = tol * max(vals + [r["eps_worst_case"], 1e-300])
        for (g1, v1), (g2, v2) in zip(zip(confs, vals), zip(confs[1:], vals[1:])):
            if v1 > v2 + slack:
                problems.append(f"input {r['index']}: eps({g1})={v1} > eps({g2})={v2}")
        if prov["norm"] == "inf" and vals[0] < r["eps_worst_case"] - slack:
            problems.append(
                f"input {r['index']}: eps({confs[0]})={vals[0]} < worst case {r['eps_worst_case']}"
            )
    return problems


def resampling_trials(values, sample_sizes=(10, 50, 100), n_trials: int = 100, seed: int = 0) -> dict:
    """Mean and std, over seeded trials, of the average of randomly chosen inputs.

    ``values`` is ``[n_inputs]`` or ``[n_inputs, n_columns]``; sampling is
    without replacement within a trial.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    out = {}
    for k, size in enumerate(sample_sizes):
        if size > vals.shape[0]:
            raise ValueError(f"sample size {size} exceeds pool of {vals.shape[0]}")
        means = np.empty((n_trials, vals.shape[1]))
        for trial in range(n_trials):
            rng = stream_rng(seed, k * n_trials + trial)
            means[trial] = vals[rng.choice(vals.shape[0], size, replace=False)].mean(axis=0)
        out[size] = {"mean": means.mean(axis=0), "std": means.std(axis=0)}
    return out


def inputs_from_dir(path) -> list[str]:
    return sorted(str(p) for p in Path(path).glob("*.json"))
