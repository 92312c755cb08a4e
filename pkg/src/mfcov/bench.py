"""Experiment harness behind the ``mfcov`` command line.

Every random draw comes from ``numpy.random.default_rng(key)`` with a tuple
key ``(root_seed, stream, ...)``, so each pilot, reference, trial and
test-point set has its own reproducible stream and a run is a pure function
of its configuration. Within one trial all estimators share the trial's
events (common random numbers): the high-fidelity-only baseline evaluates
the leading events at level 0, the multi-fidelity estimators use the same
events at every level.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .allocation import (
    CostModel,
    MomentSummary,
    Rounding,
    benefit_condition,
    estimate_moments,
    first_order_optimal_mse,
    optimal_allocation,
    optimal_coefficients,
    predicted_speedup,
)
from .estimators import (
    DEFAULT_DELTA,
    CoupledSampleHierarchy,
    MeanMode,
    emf_estimate,
    lemf_estimate,
    lemf_estimate_frechet,
    sample_covariance,
    truncated_emf_estimate,
)
from .exceptions import (
    ConfigError,
    DefinitenessError,
    HierarchyError,
    MfcovError,
    NumericalError,
)
from .io import (
    covariance_from_dict,
    covariance_to_dict,
    load_moments,
    load_plan,
    load_samples,
    read_json,
    write_json,
)
from .metric_learning import (
    DEFAULT_T,
    dissimilarity_matrix,
    gmml_metric,
    mean_relative_error,
    similarity_matrix,
)
from .models import (
    APPENDIX_SIGMA,
    GaussianNoiseHierarchy,
    HeatConduction1D,
    TwoClassGaussian,
    gaussian_preset,
    two_class_preset,
)
from .spd import smallest_eigenvalue, spd_log, spd_pow, sym_eig, symmetrize

__all__ = [
    "ESTIMATORS",
    "METRICS",
    "ModelSpec",
    "ExperimentConfig",
    "TrialResult",
    "BenchResult",
    "MetricTrial",
    "MetricResult",
    "load_config",
    "run_pilot",
    "reference_covariance",
    "cmd_pilot",
    "cmd_plan",
    "cmd_estimate",
    "cmd_bench",
    "cmd_metric",
]

ESTIMATORS = ("hf_only", "surrogate_only", "emf", "truncated_emf", "lemf")
METRICS = ("frobenius", "log_euclidean", "affine_invariant")
MULTI_FIDELITY = ("emf", "truncated_emf", "lemf")

# stream tags for the seed keys
STREAM_PILOT = 0
STREAM_TRIALS = 1
STREAM_REFERENCE = 2
STREAM_TEST_POINTS = 3
STREAM_ESTIMATE = 4

FRECHET_TOL = 1e-10


def _seed_key(root, *parts):
    return np.random.default_rng([int(root), *[int(p) for p in parts]])


# ---------------------------------------------------------------------------
# configuration


def _err(name, msg):
    return ConfigError(f"config field '{name}': {msg}")


def _positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise _err(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise _err(name, f"must be >= {minimum}, got {value}")
    return int(value)


def _real(name, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(name, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise _err(name, f"must be a {'positive ' if positive else ''}finite number, got {value}")
    return value


def _real_list(name, value, positive=False):
    if not isinstance(value, (list, tuple)) or not value:
        raise _err(name, "expected a nonempty list of numbers")
    return tuple(_real(name, v, positive) for v in value)


def _choices(name, value, allowed):
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise _err(name, f"expected a nonempty list drawn from {list(allowed)}")
    for v in value:
        if v not in allowed:
            raise _err(name, f"unknown entry {v!r}; expected one of {list(allowed)}")
    if len(set(value)) != len(value):
        raise _err(name, "entries must be distinct")
    return tuple(value)


_MODEL_KEYS = {
    "gaussian": {"Sigma", "Gammas", "costs", "mean"},
    "gaussian_preset": {"Sigma", "noise_scales", "costs"},
    "heat": {"grids", "costs", "chunk"},
    "two_class": {"dim", "gap", "noise", "costs", "seed"},
}


@dataclass(frozen=True)
class ModelSpec:
    """Model kind plus its parameters, as given in the config."""

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or "kind" not in data:
            raise _err("model", "expected an object with a 'kind' entry")
        kind = data["kind"]
        if kind not in _MODEL_KEYS:
            raise _err("model.kind", f"unknown model {kind!r}; expected one of {sorted(_MODEL_KEYS)}")
        params = {k: v for k, v in data.items() if k != "kind"}
        unknown = sorted(set(params) - _MODEL_KEYS[kind])
        if unknown:
            raise _err("model", f"unknown key(s) {unknown} for kind {kind!r}")
        if kind == "gaussian":
            for key in ("Sigma", "Gammas", "costs"):
                if key not in params:
                    raise _err(f"model.{key}", "required for kind 'gaussian'")
        return cls(kind, params)

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    def build(self):
        p = self.params
        try:
            if self.kind == "gaussian":
                return GaussianNoiseHierarchy(
                    np.asarray(p["Sigma"], dtype=float),
                    [np.asarray(G, dtype=float) for G in p["Gammas"]],
                    p["costs"],
                    mean=p.get("mean"),
                )
            if self.kind == "gaussian_preset":
                kwargs = {k: p[k] for k in ("noise_scales", "costs") if k in p}
                return gaussian_preset(Sigma=p.get("Sigma", APPENDIX_SIGMA), **kwargs)
            if self.kind == "heat":
                return HeatConduction1D(
                    tuple(p.get("grids", (4096, 256))), costs=p.get("costs"), chunk=p.get("chunk", 1024)
                )
            return two_class_preset(**{k: (tuple(v) if k == "costs" else v) for k, v in p.items()})
        except (ValueError, TypeError) as exc:
            if isinstance(exc, MfcovError) and not isinstance(exc, ConfigError):
                raise
            raise _err("model", str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, parsed from a single JSON document.

    Unknown keys are rejected. Relative paths resolve against the directory
    holding the config file.
    """

    model: ModelSpec = None
    budgets: tuple = ()
    trials: int = 1
    estimators: tuple = ESTIMATORS
    delta: float = DEFAULT_DELTA
    metrics: tuple = METRICS
    mean_mode: MeanMode = MeanMode.KNOWN_ZERO
    pilot_size: int = 1000
    root_seed: int = 0
    output: Path = None
    summary: Path = None
    moments: object = "pilot"
    costs: tuple = None
    rounding: Rounding = Rounding.FLOOR
    budget: float = None
    min_hf_samples: int = 1
    samples: Path = None
    plan: object = None
    estimator: str = "lemf"
    alphas: tuple = None
    verify_frechet: bool = False
    reference: object = None
    t: float = DEFAULT_T
    test_points: int = 100
    hf_samples: int = 15
    covariances: tuple = None
    mu: tuple = None
    workers: int = 1
    timing: bool = False

    @classmethod
    def from_dict(cls, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        base = Path(base_dir)

        def path(name):
            v = data.get(name)
            if v is None:
                return None
            if not isinstance(v, str):
                raise _err(name, "expected a path string")
            p = Path(v)
            return p if p.is_absolute() else base / p

        def path_or_inline(name):
            v = data.get(name)
            return path(name) if isinstance(v, str) and v not in ("pilot", "closed_form") else v

        kw = {}
        if "model" in data:
            kw["model"] = ModelSpec.from_dict(data["model"])
        if "budgets" in data:
            kw["budgets"] = _real_list("budgets", data["budgets"], positive=True)
        if "trials" in data:
            kw["trials"] = _positive_int("trials", data["trials"])
        if "estimators" in data:
            kw["estimators"] = _choices("estimators", data["estimators"], ESTIMATORS)
        if "delta" in data:
            kw["delta"] = _real("delta", data["delta"], positive=True)
        if "metrics" in data:
            kw["metrics"] = _choices("metrics", data["metrics"], METRICS)
        if "mean_mode" in data:
            try:
                kw["mean_mode"] = MeanMode.parse(data["mean_mode"])
            except ValueError as exc:
                raise _err("mean_mode", str(exc)) from None
        if "pilot_size" in data:
            kw["pilot_size"] = _positive_int("pilot_size", data["pilot_size"])
        if "root_seed" in data:
            kw["root_seed"] = _positive_int("root_seed", data["root_seed"], minimum=0)
        for name in ("output", "summary", "samples"):
            if name in data:
                kw[name] = path(name)
        if "moments" in data:
            v = data["moments"]
            if not isinstance(v, (str, dict)):
                raise _err("moments", "expected 'pilot', 'closed_form', a path or an object")
            kw["moments"] = path_or_inline("moments")
        if "plan" in data:
            if not isinstance(data["plan"], (str, dict)):
                raise _err("plan", "expected a path or an object")
            kw["plan"] = path_or_inline("plan")
        if "costs" in data:
            kw["costs"] = _real_list("costs", data["costs"], positive=True)
        if "rounding" in data:
            try:
                kw["rounding"] = Rounding.parse(data["rounding"])
            except ValueError as exc:
                raise _err("rounding", str(exc)) from None
        if "budget" in data:
            kw["budget"] = _real("budget", data["budget"], positive=True)
        if "min_hf_samples" in data:
            kw["min_hf_samples"] = _positive_int("min_hf_samples", data["min_hf_samples"])
        if "estimator" in data:
            kw["estimator"] = _choices("estimator", data["estimator"], ESTIMATORS)[0]
        if "alphas" in data:
            v = data["alphas"]
            kw["alphas"] = _real_list("alphas", v) if v != [] else ()
        if "verify_frechet" in data:
            kw["verify_frechet"] = _bool("verify_frechet", data["verify_frechet"])
        if "reference" in data:
            v = data["reference"]
            if isinstance(v, str):
                kw["reference"] = path("reference")
            elif isinstance(v, dict):
                kw["reference"] = _reference_spec(v, base)
            else:
                raise _err("reference", "expected a path or an object")
        if "t" in data:
            t = _real("t", data["t"])
            if not 0.0 <= t <= 1.0:
                raise _err("t", f"must lie in [0, 1], got {t}")
            kw["t"] = t
        if "test_points" in data:
            kw["test_points"] = _positive_int("test_points", data["test_points"])
        if "hf_samples" in data:
            kw["hf_samples"] = _positive_int("hf_samples", data["hf_samples"], minimum=2)
        if "covariances" in data:
            v = data["covariances"]
            if not isinstance(v, list) or len(v) != 2 or not all(isinstance(p, (str, dict)) for p in v):
                raise _err("covariances", "expected two paths (or covariance objects)")
            kw["covariances"] = tuple(
                (Path(p) if Path(p).is_absolute() else base / p) if isinstance(p, str) else p for p in v
            )
        if "mu" in data:
            kw["mu"] = _real_list("mu", data["mu"])
        if "workers" in data:
            kw["workers"] = _positive_int("workers", data["workers"])
        if "timing" in data:
            kw["timing"] = _bool("timing", data["timing"])
        return cls(**kw)

    def with_overrides(self, seed=None, output=None, verify_frechet=None):
        kw = {}
        if seed is not None:
            if seed < 0 or seed >= 2**64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
            kw["root_seed"] = int(seed)
        if output is not None:
            kw["output"] = Path(output)
        if verify_frechet:
            kw["verify_frechet"] = True
        return replace(self, **kw)

    def require(self, *names):
        for name in names:
            if getattr(self, name) in (None, ()):
                raise _err(name, "required for this command")


def _bool(name, value):
    if not isinstance(value, bool):
        raise _err(name, f"expected true or false, got {value!r}")
    return value


def _reference_spec(v, base):
    allowed = {"kind", "n", "seed", "cache", "file"}
    unknown = sorted(set(v) - allowed)
    if unknown:
        raise _err("reference", f"unknown key(s) {unknown}")
    spec = dict(v)
    if "file" in spec:
        p = Path(spec["file"])
        return p if p.is_absolute() else base / p
    kind = spec.get("kind", "lemf")
    if kind not in ("lemf", "hf"):
        raise _err("reference.kind", f"expected 'lemf' or 'hf', got {kind!r}")
    if "n" not in spec:
        raise _err("reference.n", "sample counts are required")
    n = spec["n"] if isinstance(spec["n"], list) else [spec["n"]]
    spec["n"] = [_positive_int("reference.n", k, minimum=2) for k in n]
    spec["kind"] = kind
    spec["seed"] = _positive_int("reference.seed", spec.get("seed", 0), minimum=0)
    if "cache" in spec:
        p = Path(spec["cache"])
        spec["cache"] = p if p.is_absolute() else base / p
    return spec


def load_config(path):
    """Parse a config file; JSON errors become :class:`ConfigError`."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def _model(cfg):
    cfg.require("model")
    return cfg.model.build()


def _costs(cfg, model=None):
    if cfg.costs is not None:
        return CostModel(cfg.costs)
    if model is not None:
        return model.costs
    raise _err("costs", "required when no model is configured")


# ---------------------------------------------------------------------------
# pilot and moments


def run_pilot(model, cfg):
    """Moments from ``pilot_size`` coupled events at every level."""
    n = [cfg.pilot_size] * model.num_levels
    h = model.sample_hierarchy(n, _seed_key(cfg.root_seed, STREAM_PILOT))
    return estimate_moments(h, cfg.mean_mode), model.cost(n)


def _moments(cfg, model=None):
    spec = cfg.moments
    if isinstance(spec, dict):
        try:
            return MomentSummary.from_dict(spec.get("moments", spec))
        except (KeyError, ValueError) as exc:
            raise _err("moments", str(exc)) from exc
    if isinstance(spec, Path):
        return load_moments(spec)
    if model is None:
        raise _err("moments", "a moment summary (object or path) is required without a model")
    if spec == "closed_form":
        if not hasattr(model, "closed_form_moments"):
            raise _err("moments", f"model kind {cfg.model.kind!r} has no closed-form moments")
        return model.closed_form_moments()
    return run_pilot(model, cfg)[0]


def cmd_pilot(cfg):
    """Pilot study: moments plus pilot cost, as a JSON-ready dict."""
    model = _model(cfg)
    if isinstance(model, TwoClassGaussian):
        raise _err("model.kind", "pilot needs a single-class model")
    m, cost = run_pilot(model, cfg)
    out = m.to_dict()
    out.update(
        pilot_size=cfg.pilot_size,
        pilot_cost=float(cost),
        mean_mode=cfg.mean_mode.value,
        root_seed=cfg.root_seed,
    )
    return out


def cmd_plan(cfg):
    """Allocation report: plan, weights, predicted MSE and benefit check."""
    model = _model(cfg) if cfg.model is not None else None
    cfg.require("budget")
    m = _moments(cfg, model)
    c = _costs(cfg, model)
    plan = optimal_allocation(m, c, cfg.budget, cfg.rounding, cfg.min_hf_samples)
    check = benefit_condition(m, c)
    return {
        "plan": plan.to_dict(),
        "moments": m.to_dict(),
        "costs": c.costs.tolist(),
        "benefit": {"holds": check.holds, "lhs": check.lhs},
        "predicted_speedup": predicted_speedup(m, c),
        "first_order_mse": first_order_optimal_mse(m, c, cfg.budget),
    }


# ---------------------------------------------------------------------------
# single estimate


def _estimate(kind, h, alphas, mode, delta):
    if kind == "hf_only":
        return sample_covariance(h.samples[0], mode)
    if kind == "surrogate_only":
        return sample_covariance(h.samples[-1], mode)
    if kind == "emf":
        return emf_estimate(h, alphas, mode)
    if kind == "truncated_emf":
        return truncated_emf_estimate(h, alphas, mode, delta)
    return lemf_estimate(h, alphas, mode)


def cmd_estimate(cfg):
    """One estimate from stored samples, or from a model and a plan."""
    plan = None
    if cfg.plan is not None:
        plan = load_plan(cfg.plan)
    if cfg.samples is not None:
        h, _ = load_samples(cfg.samples)
    else:
        if plan is None:
            raise _err("samples", "either 'samples' or 'model' plus 'plan' is required")
        model = _model(cfg)
        full = model.sample_hierarchy(plan.n, _seed_key(cfg.root_seed, STREAM_ESTIMATE))
        h = full.select(plan.active_levels)
    if cfg.alphas is not None:
        alphas = np.asarray(cfg.alphas, dtype=float)
    elif plan is not None:
        alphas = np.asarray(plan.active_alphas(), dtype=float)
    elif cfg.moments not in (None, "pilot", "closed_form"):
        alphas = optimal_coefficients(_moments(cfg))
    elif cfg.estimator in MULTI_FIDELITY and h.num_levels > 1:
        raise _err("alphas", "control-variate weights are required (alphas, plan or moments)")
    else:
        alphas = np.zeros(h.num_levels - 1)
    C = _estimate(cfg.estimator, h, alphas, cfg.mean_mode, cfg.delta)
    if cfg.estimator == "truncated_emf":
        # the clamped spectrum itself; re-measuring the reassembled matrix
        # would bury delta = 1e-16 under round-off
        lam = max(smallest_eigenvalue(emf_estimate(h, alphas, cfg.mean_mode)), cfg.delta)
    else:
        lam = smallest_eigenvalue(C)
    out = covariance_to_dict(
        C,
        estimator=cfg.estimator,
        lambda_min=lam,
        spd=bool(lam > 0),
        counts=list(h.counts),
        alphas=np.asarray(alphas).tolist(),
        mean_mode=cfg.mean_mode.value,
    )
    if cfg.verify_frechet:
        if cfg.estimator != "lemf":
            raise _err("verify_frechet", "only applies to the lemf estimator")
        F = lemf_estimate_frechet(h, alphas, cfg.mean_mode)
        rel = float(np.linalg.norm(F - C) / np.linalg.norm(C))
        out["frechet_check"] = {"relative_difference": rel, "tolerance": FRECHET_TOL, "ok": rel <= FRECHET_TOL}
        if rel > FRECHET_TOL:
            raise NumericalError(
                f"Fréchet-mean form disagrees with the log-domain form (relative difference {rel:.3g})"
            )
    return out


# ---------------------------------------------------------------------------
# reference covariance


def reference_covariance(model, cfg):
    """The covariance distances are measured against.

    The model's exact covariance when it has one; otherwise the configured
    reference: a covariance file, or a large seeded estimate (high-fidelity
    sample covariance, or an LEMF estimate over ``n`` coupled samples with
    weights from the reference sample's own moments) that is cached to
    ``cache`` together with its recipe.
    """
    Sigma = model.true_covariance
    if Sigma is not None and cfg.reference is None:
        return Sigma
    spec = cfg.reference
    if spec is None:
        raise _err("reference", f"model kind {cfg.model.kind!r} has no exact covariance; configure a reference")
    if isinstance(spec, Path):
        return covariance_from_dict(read_json(spec))
    recipe = {
        "kind": spec["kind"],
        "n": list(spec["n"]),
        "seed": spec["seed"],
        "model": cfg.model.to_dict(),
        "mean_mode": cfg.mean_mode.value,
    }
    cache = spec.get("cache")
    if cache is not None and Path(cache).exists():
        data = read_json(cache)
        if data.get("recipe") == json.loads(json.dumps(recipe)):
            return covariance_from_dict(data)
    Sigma = _compute_reference(model, recipe, cfg.mean_mode)
    if cache is not None:
        Path(cache).parent.mkdir(parents=True, exist_ok=True)
        write_json(covariance_to_dict(Sigma, recipe=recipe), cache)
    return Sigma


def _compute_reference(model, recipe, mode):
    rng = _seed_key(recipe["seed"], STREAM_REFERENCE)
    n = recipe["n"]
    if recipe["kind"] == "hf":
        h = model.sample_hierarchy([n[0]] + [0] * (model.num_levels - 1), rng)
        return sample_covariance(h.samples[0], mode)
    if len(n) != model.num_levels:
        raise _err("reference.n", f"need {model.num_levels} counts for an lemf reference")
    h = model.sample_hierarchy(n, rng)
    paired = CoupledSampleHierarchy(tuple(Y[: n[0]] for Y in h.samples))
    alphas = optimal_coefficients(estimate_moments(paired, mode))
    return lemf_estimate(h, alphas, mode)


# ---------------------------------------------------------------------------
# budget sweep


@dataclass(frozen=True)
class TrialResult:
    """One (budget, estimator, trial) cell.

    Distances are ``nan`` when not requested or when the trial failed, and
    ``inf`` for the log-Euclidean / affine-invariant distances of an
    estimate whose smallest eigenvalue is not positive.
    """

    budget: float
    estimator: str
    trial: int
    d_frob: float
    d_logE: float
    d_aff: float
    lambda_min: float
    wall_ms: float
    cost: float = math.nan
    error: str = ""

    def as_row(self):
        return (self.budget, self.estimator, self.trial, self.d_frob, self.d_logE, self.d_aff, self.lambda_min, self.wall_ms)

    @property
    def indefinite(self):
        return self.lambda_min <= 0

    @property
    def failed(self):
        return bool(self.error)


@dataclass
class BenchResult:
    rows: list
    summary: list
    reference: np.ndarray
    moments: MomentSummary
    plans: dict


class _Reference:
    """Reference covariance with its log and inverse square root precomputed."""

    def __init__(self, Sigma):
        self.Sigma = symmetrize(Sigma)
        self.log = spd_log(self.Sigma)
        self.isqrt = spd_pow(self.Sigma, -0.5)


def _distances(C, ref, metrics, delta=None):
    """``(d_frob, d_logE, d_aff, lambda_min)`` of ``C`` against the reference.

    With ``delta`` the spectrum is clamped at ``delta`` first. The log and
    the affine-invariant distance are taken from the clamped spectrum
    directly (the latter through singular values of
    ``Sigma^{-1/2} Q Lambda^{1/2}``), so eigenvalues near ``delta`` are not
    lost to round-off when the clamped matrix is reassembled.
    """
    eig = sym_eig(C)
    lam = eig.eigenvalues
    if delta is not None and lam[-1] < delta:
        lam = np.maximum(lam, delta)
        C = eig.reconstruct(lam)
    lam_min = float(lam[-1])
    nan = math.nan
    d_frob = float(np.linalg.norm(C - ref.Sigma)) if "frobenius" in metrics else nan
    if lam_min <= 0:
        d_le = math.inf if "log_euclidean" in metrics else nan
        d_aff = math.inf if "affine_invariant" in metrics else nan
        return d_frob, d_le, d_aff, lam_min
    d_le = d_aff = nan
    if "log_euclidean" in metrics:
        d_le = float(np.linalg.norm(eig.reconstruct(np.log(lam)) - ref.log))
    if "affine_invariant" in metrics:
        s = np.linalg.svd(ref.isqrt @ (eig.eigenvectors * np.sqrt(lam)), compute_uv=False)
        d_aff = float(np.sqrt(np.sum((2.0 * np.log(s)) ** 2)))
    return d_frob, d_le, d_aff, lam_min


@dataclass(frozen=True)
class _Cell:
    """Per-budget sample counts for every estimator."""

    budget: float
    counts: dict
    levels: dict
    alphas: tuple
    costs: dict


def _cells(cfg, model, m):
    c = model.costs.costs
    top = model.num_levels - 1
    cells = []
    plans = {}
    for B in cfg.budgets:
        counts, levels, costs = {}, {}, {}
        alphas = ()
        if "hf_only" in cfg.estimators:
            k = int(B // c[0])
            counts["hf_only"], levels["hf_only"], costs["hf_only"] = (k,), (0,), k * c[0]
        if "surrogate_only" in cfg.estimators:
            k = int(B // c[top])
            counts["surrogate_only"], levels["surrogate_only"], costs["surrogate_only"] = (k,), (top,), k * c[top]
        if any(e in cfg.estimators for e in MULTI_FIDELITY):
            plan = optimal_allocation(m, model.costs, B, cfg.rounding, cfg.min_hf_samples)
            plans[B] = plan
            act = tuple(plan.active_levels)
            alphas = tuple(plan.active_alphas())
            for e in MULTI_FIDELITY:
                if e in cfg.estimators:
                    counts[e] = tuple(int(plan.n[l]) for l in act)
                    levels[e] = act
                    costs[e] = plan.realized_cost
        cells.append(_Cell(float(B), counts, levels, alphas, costs))
    return cells, plans


def _run_trial(cfg, model, ref, cell, bi, t):
    """All estimator rows of one (budget, trial) pair, sharing its events."""
    need = [0] * model.num_levels
    for e, lv in cell.levels.items():
        for l, k in zip(lv, cell.counts[e]):
            need[l] = max(need[l], k)
    rng = _seed_key(cfg.root_seed, STREAM_TRIALS, bi, t)
    w = model.draw_inputs(rng, max(need))
    out = [model.evaluate(l, w[:k]) if k else None for l, k in enumerate(need)]
    rows = []
    emf_cache = {}
    for e in cfg.estimators:
        start = time.perf_counter()
        try:
            samples = tuple(out[l][:k] for l, k in zip(cell.levels[e], cell.counts[e]))
            delta = None
            if e in ("hf_only", "surrogate_only"):
                C = sample_covariance(samples[0], cfg.mean_mode)
            else:
                h = CoupledSampleHierarchy(samples)
                if e == "lemf":
                    C = lemf_estimate(h, cell.alphas, cfg.mean_mode)
                else:
                    if "C" not in emf_cache:
                        emf_cache["C"] = emf_estimate(h, cell.alphas, cfg.mean_mode)
                    C = emf_cache["C"]
                    delta = cfg.delta if e == "truncated_emf" else None
            d = _distances(C, ref, cfg.metrics, delta)
            err = ""
        except (NumericalError, HierarchyError, ValueError) as exc:
            d = (math.nan,) * 4
            err = f"{type(exc).__name__}: {exc}"
        wall = (time.perf_counter() - start) * 1e3 if cfg.timing else math.nan
        rows.append(TrialResult(cell.budget, e, t, *d, wall, cell.costs[e], err))
    return rows


def _summarize(rows, metrics):
    cols = {"frobenius": "d_frob", "log_euclidean": "d_logE", "affine_invariant": "d_aff"}
    groups = {}
    for r in rows:
        groups.setdefault((r.budget, r.estimator), []).append(r)
    out = []
    for (B, e), rs in groups.items():
        ok = [r for r in rs if not r.failed]
        indef = sum(r.indefinite for r in ok)
        for metric in metrics:
            sq = np.array([getattr(r, cols[metric]) ** 2 for r in ok])
            finite = sq[np.isfinite(sq)]
            mean = float(np.mean(sq)) if sq.size else math.nan
            out.append(
                (
                    B,
                    e,
                    metric,
                    len(rs),
                    int(finite.size),
                    mean,
                    float(finite.min()) if finite.size else math.nan,
                    float(finite.max()) if finite.size else math.nan,
                    indef / len(ok) if ok else math.nan,
                    len(rs) - len(ok),
                    rs[0].cost,
                )
            )
    return out


def cmd_bench(cfg):
    """Budget sweep: every budget x estimator x trial, rows in that order."""
    cfg.require("budgets")
    model = _model(cfg)
    if isinstance(model, TwoClassGaussian):
        raise _err("model.kind", "bench needs a single-class model; use the metric command")
    m = _moments(cfg, model)
    ref = _Reference(reference_covariance(model, cfg))
    cells, plans = _cells(cfg, model, m)
    tasks = [(bi, t) for bi in range(len(cells)) for t in range(cfg.trials)]

    def run(task):
        bi, t = task
        return _run_trial(cfg, model, ref, cells[bi], bi, t)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            batches = list(pool.map(run, tasks))
    else:
        batches = [run(task) for task in tasks]
    order = {e: i for i, e in enumerate(cfg.estimators)}
    rows = sorted((r for b in batches for r in b), key=lambda r: (r.budget, order[r.estimator], r.trial))
    return BenchResult(rows, _summarize(rows, cfg.metrics), ref.Sigma, m, plans)


# ---------------------------------------------------------------------------
# metric learning pipeline


@dataclass(frozen=True)
class MetricTrial:
    """One estimator's learned metric in one trial.

    ``status`` is ``ok``, ``invalid_metric`` (a class covariance estimate is
    not positive definite, so no metric exists) or ``error``.
    """

    trial: int
    estimator: str
    status: str
    mre: float
    d_frob: float
    d_logE: float
    d_aff: float
    lambda_min: float

    def as_row(self):
        return (self.trial, self.estimator, self.status, self.mre, self.d_frob, self.d_logE, self.d_aff, self.lambda_min)


@dataclass
class MetricResult:
    rows: list
    summary: list
    reference_metric: np.ndarray
    counts: tuple


def _class_allocation(m, costs, hf):
    """``hf`` high-fidelity samples, surrogates at the optimal ratio."""
    plan = optimal_allocation(m, costs, costs.costs[0] * 1e6, Rounding.NONE)
    ratio = plan.n_real / plan.n_real[0]
    n = [hf]
    for r in ratio[1:]:
        n.append(max(n[-1], int(math.floor(hf * r))))
    return tuple(n), tuple(plan.alphas)


def _metric_distances(A, A0_ref, metrics):
    return _distances(A, A0_ref, metrics)[:3]


def _metric_json(cfg):
    covs = []
    for src in cfg.covariances:
        covs.append(covariance_from_dict(src if isinstance(src, dict) else read_json(src)))
    cfg.require("mu")
    S = similarity_matrix(*covs)
    D = dissimilarity_matrix(S, np.asarray(cfg.mu))
    metric = gmml_metric(S, D, cfg.t, provenance="covariance files")
    return {
        "A": metric.A.tolist(),
        "t": metric.t,
        "S": S.tolist(),
        "D": D.tolist(),
        "lambda_min_A": smallest_eigenvalue(metric.A),
        "provenance": metric.provenance,
    }


def cmd_metric(cfg):
    """Metric learning: JSON for two given covariances, else the pipeline.

    With ``covariances`` and ``mu`` configured, returns the learned metric as
    a dict. Otherwise runs the two-class pipeline and returns a
    :class:`MetricResult`.
    """
    if cfg.covariances is not None:
        return _metric_json(cfg)
    model = _model(cfg)
    if not isinstance(model, TwoClassGaussian):
        raise _err("model.kind", "the metric pipeline needs a 'two_class' model")
    if model.num_levels < 2 and any(e in MULTI_FIDELITY + ("surrogate_only",) for e in cfg.estimators):
        raise _err("estimators", "multi-fidelity estimators need at least two levels")
    costs = model.costs
    top = model.num_levels - 1
    d = model.output_dim

    # pilot per class: moments and the class-mean difference
    moments, means = [], []
    for i, cls in enumerate(model.classes):
        h = cls.sample_hierarchy([cfg.pilot_size] * model.num_levels, _seed_key(cfg.root_seed, STREAM_PILOT, i))
        moments.append(estimate_moments(h, cfg.mean_mode))
        means.append(h.samples[0].mean(axis=0))
    mu = means[0] - means[1]

    # reference metric from exact class moments
    true_covs = [cls.true_covariance for cls in model.classes]
    S0 = similarity_matrix(*true_covs)
    A0 = gmml_metric(S0, dissimilarity_matrix(S0, model.mean_gap), cfg.t, provenance="exact").A
    A0_ref = _Reference(A0)

    rng = _seed_key(cfg.root_seed, STREAM_TEST_POINTS)
    labels = rng.integers(0, 2, cfg.test_points)
    test = np.empty((cfg.test_points, d))
    for i, cls in enumerate(model.classes):
        k = int(np.count_nonzero(labels == i))
        test[labels == i] = cls.evaluate(0, cls.draw_inputs(rng, k))

    allocs = [_class_allocation(mi, costs, cfg.hf_samples) for mi in moments]
    class_counts = []
    for n, _ in allocs:
        B = float(np.dot(costs.costs, n))
        counts = {"hf_only": ((0,), (int(B // costs.costs[0]),)), "surrogate_only": ((top,), (int(B // costs.costs[top]),))}
        for e in MULTI_FIDELITY:
            counts[e] = (tuple(range(model.num_levels)), n)
        class_counts.append(counts)

    rows = []
    for t in range(cfg.trials):
        per_class = []
        for i, cls in enumerate(model.classes):
            need = [0] * model.num_levels
            for e in cfg.estimators:
                lv, ks = class_counts[i][e]
                for l, k in zip(lv, ks):
                    need[l] = max(need[l], k)
            w = cls.draw_inputs(_seed_key(cfg.root_seed, STREAM_TRIALS, t, i), max(need))
            out = [cls.evaluate(l, w[:k]) if k else None for l, k in enumerate(need)]
            ests = {}
            for e in cfg.estimators:
                lv, ks = class_counts[i][e]
                samples = tuple(out[l][:k] for l, k in zip(lv, ks))
                try:
                    if e in ("hf_only", "surrogate_only"):
                        ests[e] = sample_covariance(samples[0], cfg.mean_mode)
                    else:
                        ests[e] = _estimate(e, CoupledSampleHierarchy(samples), allocs[i][1], cfg.mean_mode, cfg.delta)
                except (NumericalError, HierarchyError, ValueError) as exc:
                    ests[e] = exc
            per_class.append(ests)
        for e in cfg.estimators:
            pair = [per_class[0][e], per_class[1][e]]
            nan = math.nan
            if any(isinstance(p, Exception) for p in pair):
                rows.append(MetricTrial(t, e, "error", nan, nan, nan, nan, nan))
                continue
            lam = min(smallest_eigenvalue(p) for p in pair)
            try:
                # truncation makes the estimate positive definite by construction
                S = similarity_matrix(*pair, validate=e != "truncated_emf")
            except DefinitenessError:
                rows.append(MetricTrial(t, e, "invalid_metric", nan, nan, nan, nan, lam))
                continue
            try:
                metric = gmml_metric(S, dissimilarity_matrix(S, mu), cfg.t, provenance=e)
                mre = mean_relative_error(metric, A0, test)
                df, dl, da = _metric_distances(metric.A, A0_ref, cfg.metrics)
                rows.append(MetricTrial(t, e, "ok", mre, df, dl, da, lam))
            except NumericalError:
                rows.append(MetricTrial(t, e, "error", nan, nan, nan, nan, lam))
    order = {e: i for i, e in enumerate(cfg.estimators)}
    rows.sort(key=lambda r: (order[r.estimator], r.trial))
    return MetricResult(rows, _metric_summary(rows, cfg.estimators), A0, tuple(n for n, _ in allocs))


def _metric_summary(rows, estimators):
    out = []
    for e in estimators:
        rs = [r for r in rows if r.estimator == e]
        ok = [r for r in rs if r.status == "ok"]

        def mean(vals):
            return float(np.mean(vals)) if vals else math.nan

        out.append(
            (
                e,
                len(rs),
                len(ok),
                sum(r.status == "invalid_metric" for r in rs),
                sum(r.status == "error" for r in rs),
                mean([r.mre for r in ok]),
                mean([r.d_frob**2 for r in ok]),
                mean([r.d_logE**2 for r in ok]),
                mean([r.d_aff**2 for r in ok]),
            )
        )
    return out
