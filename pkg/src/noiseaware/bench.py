"""Memory-experiment benchmarks: priors, fits, confusion matrices, reports.

A run samples one fault stream per (instance, distance, rounds, basis) and
decodes it with every requested prior, so per-shot outcomes are paired
across priors. Logical error per round comes from a weighted fit of
``log(1 - 2 F(r)) = r log(1 - 2 eps) + c``; the suppression factor from
``log eps = a - (d / 2) log Lambda``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .design import build_design, compute_design_matrix, optimize_shot_weights
from .estimate import estimate_noise, simulate_experiments
from .matching import decode_batch
from .memory import memory_experiment, sample_syndromes
from .noise import NoiseInstance, NoiseParameters, sample_lognormal_instance, tuned_depolarizing_instance
from .surface import build_layout, characterization_circuit

REPORT_VERSION = 1
MAX_EXTRAPOLATION_DISTANCE = 101


class FitError(ValueError):
    """Too few usable points for a fit."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, numerical: bool = False):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.numerical = numerical


# Fits.


@dataclass(frozen=True)
class EpsilonFit:
    eps: float
    se: float
    intercept: float
    used_rounds: tuple[int, ...]


def _wls_line(x, y, var):
    """Weighted straight-line fit with known variances; returns coefficients and covariance."""
    x, y, var = (np.asarray(a, dtype=float) for a in (x, y, var))
    w = 1.0 / var
    design = np.column_stack([np.ones_like(x), x])
    info = design.T @ (w[:, None] * design)
    cov = np.linalg.inv(info)
    coef = cov @ design.T @ (w * y)
    return coef, cov


def fit_epsilon(rounds, failure_rates, shots) -> EpsilonFit:
    """Logical error per round from failure rates over several round counts.

    Rows with ``F >= 0.5`` are censored. Variances use ``F(1 - F) / N``
    (with ``F`` floored at ``0.5 / N``) through the delta method.
    """
    rounds = np.asarray(rounds, dtype=float)
    f = np.asarray(failure_rates, dtype=float)
    n = np.broadcast_to(np.asarray(shots, dtype=float), f.shape)
    keep = f < 0.5
    if np.unique(rounds[keep]).size < 2:
        raise FitError("need at least two distinct round counts with F < 0.5")
    r, f, n = rounds[keep], f[keep], n[keep]
    y = np.log1p(-2 * f)
    f_var = np.maximum(f, 0.5 / n)
    var = f_var * (1 - f_var) / n * 4 / (1 - 2 * f) ** 2
    coef, cov = _wls_line(r, y, var)
    slope = coef[1]
    eps = (1 - math.exp(slope)) / 2
    se = math.exp(slope) / 2 * math.sqrt(cov[1, 1])
    return EpsilonFit(float(eps), float(se), float(coef[0]), tuple(int(x) for x in r))


@dataclass(frozen=True)
class LambdaFit:
    Lambda: float
    se: float
    slope: float
    intercept: float


def fit_lambda(distances, eps, se=None) -> LambdaFit:
    """Suppression factor from ``log eps`` linear in ``d`` with slope ``-log(Lambda) / 2``."""
    d = np.asarray(distances, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.unique(d).size < 2:
        raise FitError("need at least two distances")
    if np.any(eps <= 0):
        raise FitError("logical error rates must be positive")
    var = np.ones_like(eps) if se is None else (np.asarray(se, dtype=float) / eps) ** 2
    var = np.maximum(var, 1e-300)
    coef, cov = _wls_line(d, np.log(eps), var)
    lam = math.exp(-2 * coef[1])
    return LambdaFit(lam, float(2 * lam * math.sqrt(cov[1, 1])), float(coef[1]), float(coef[0]))


@dataclass(frozen=True)
class RatioFit:
    """``log(eps_b / eps_a) = alpha + beta d`` with standard errors."""

    beta: float
    beta_se: float
    alpha: float


def fit_ratio(distances, log_ratio, log_ratio_se=None) -> RatioFit:
    d = np.asarray(distances, dtype=float)
    if np.unique(d).size < 2:
        raise FitError("need at least two distances")
    var = np.ones(d.size) if log_ratio_se is None else np.maximum(np.asarray(log_ratio_se) ** 2, 1e-300)
    coef, cov = _wls_line(d, log_ratio, var)
    return RatioFit(float(coef[1]), float(math.sqrt(cov[1, 1])), float(coef[0]))


def paired_log_ratio(rounds, fail_a, fail_b, both, shots) -> tuple[float, float]:
    """``log(eps_b / eps_a)`` at one distance with paired-outcome covariance.

    ``fail_a``/``fail_b``/``both`` are failure counts per round value. Both
    priors use the same line-fit weights so the two slopes are linear in the
    data and their covariance follows from the per-shot joint failures.
    """
    r = np.asarray(rounds, dtype=float)
    n = np.asarray(shots, dtype=float)
    fa, fb, fab = (np.asarray(x, dtype=float) / n for x in (fail_a, fail_b, both))
    if np.any(fa >= 0.5) or np.any(fb >= 0.5):
        raise FitError("failure rate at or above 1/2")
    ya, yb = np.log1p(-2 * fa), np.log1p(-2 * fb)
    ga, gb = -2 / (1 - 2 * fa), -2 / (1 - 2 * fb)
    fa_v, fb_v = np.maximum(fa, 0.5 / n), np.maximum(fb, 0.5 / n)
    var_a = fa_v * (1 - fa_v) / n * ga**2
    var_b = fb_v * (1 - fb_v) / n * gb**2
    cov_ab = (fab - fa * fb) / n * ga * gb
    w = 2 / (var_a + var_b)
    design = np.column_stack([np.ones_like(r), r])
    info_inv = np.linalg.inv(design.T @ (w[:, None] * design))
    g = (info_inv @ design.T * w)[1]  # slope = g @ y
    sa, sb = g @ ya, g @ yb
    v_aa, v_bb, v_ab = g**2 @ var_a, g**2 @ var_b, g**2 @ cov_ab
    # d log(eps)/d slope with eps = (1 - e^s) / 2.
    da = -math.exp(sa) / (1 - math.exp(sa))
    db = -math.exp(sb) / (1 - math.exp(sb))
    value = math.log((1 - math.exp(sb)) / (1 - math.exp(sa)))
    var = db**2 * v_bb + da**2 * v_aa - 2 * da * db * v_ab
    return value, math.sqrt(max(var, 0.0))


def one_sided_lower(values) -> tuple[float, float, float]:
    """Mean, standard error and one-sided 95% lower bound (Student t)."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if x.size < 2:
        return mean, float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    return mean, se, mean - float(stats.t.ppf(0.95, x.size - 1)) * se


# Confusion matrices.


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, i]`` failures of prior ``i``; ``counts[i, j]`` shots where ``i`` succeeded and ``j`` failed."""

    names: tuple[str, ...]
    counts: np.ndarray

    def check_identity(self) -> bool:
        c = self.counts
        diag = np.diag(c)
        return bool(np.all(diag[None, :] - diag[:, None] == c - c.T))

    def to_dict(self) -> dict:
        return {"priors": list(self.names), "counts": self.counts.astype(int).tolist()}


def confusion_matrix(failures: dict[str, np.ndarray]) -> ConfusionMatrix:
    names = tuple(failures)
    arrays = [np.asarray(failures[k], dtype=bool) for k in names]
    if len({a.shape for a in arrays}) > 1:
        raise ValueError("failure arrays must share one shot count")
    k = len(names)
    counts = np.zeros((k, k), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            counts[i, j] = arrays[i].sum() if i == j else (~arrays[i] & arrays[j]).sum()
    return ConfusionMatrix(names, counts)


def add_confusion(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.names != b.names:
        raise ValueError("prior names differ")
    return ConfusionMatrix(a.names, a.counts + b.counts)


# Extrapolation.


def qubit_count(d: int) -> int:
    """Data plus measure qubits of a distance-``d`` rotated surface code."""
    return 2 * d * d - 1


@dataclass(frozen=True)
class Extrapolation:
    distance: int
    qubits: int
    eps: float
    flagged: bool


def extrapolate(fit: LambdaFit, distance: int, max_distance: int = MAX_EXTRAPOLATION_DISTANCE) -> Extrapolation:
    eps = math.exp(fit.intercept + fit.slope * distance)
    return Extrapolation(int(distance), qubit_count(distance), eps, distance > max_distance)


def distance_for_target(fit: LambdaFit, target_eps: float, max_distance: int = MAX_EXTRAPOLATION_DISTANCE) -> Extrapolation:
    """Smallest odd distance whose extrapolated ``eps`` is at most ``target_eps``."""
    if fit.slope >= 0:
        raise FitError("no suppression: error rate does not fall with distance")
    d = math.ceil((math.log(target_eps) - fit.intercept) / fit.slope)
    d = max(d, 3)
    if d % 2 == 0:
        d += 1
    return extrapolate(fit, d, max_distance)


def comparison_table(fits: dict[str, LambdaFit], target_eps: float) -> list[dict]:
    """Distance and qubit count each prior needs to reach ``target_eps``."""
    rows = []
    for name, fit in fits.items():
        ex = distance_for_target(fit, target_eps)
        rows.append({"prior": name, "distance": ex.distance, "qubits": ex.qubits, "eps": ex.eps, "flagged": ex.flagged})
    return rows


def format_comparison(rows: list[dict]) -> str:
    lines = [f"{'prior':<12}{'d':>5}{'qubits':>9}{'eps':>12}"]
    for row in rows:
        flag = "  (beyond guardrail)" if row["flagged"] else ""
        lines.append(f"{row['prior']:<12}{row['distance']:>5}{row['qubits']:>9}{row['eps']:>12.3e}{flag}")
    if len(rows) >= 2:
        diff = max(r["qubits"] for r in rows) - min(r["qubits"] for r in rows)
        lines.append(f"qubit reduction: {diff}")
    return "\n".join(lines)


# Pipeline.


@dataclass(frozen=True)
class RunConfig:
    """Pipeline configuration; ``shots`` per (d, r) point, split evenly over X and Z memory."""

    distances: tuple[int, ...] = (3, 5)
    rounds: tuple[int, ...] = (3, 5, 9)
    shots: int = 2000
    noise: str = "lognormal"
    params: NoiseParameters = field(default_factory=NoiseParameters)
    seeds: tuple[int, ...] = (0,)
    priors: tuple[str, ...] = ("true", "dep")
    bases: tuple[str, ...] = ("Z", "X")
    aces_method: str = "gls"
    aces_weight_iterations: int = 10
    decoder: str = "auto"
    out: str | None = None

    def __post_init__(self):
        for name in ("distances", "rounds", "seeds", "priors", "bases"):
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"{name} must be non-empty")
            object.__setattr__(self, name, tuple(value))
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if any(d < 3 or d % 2 == 0 for d in self.distances):
            raise ConfigError("distances must be odd and >= 3")
        if any(r < 1 for r in self.rounds):
            raise ConfigError("rounds must be >= 1")
        if self.noise not in ("lognormal", "depolarizing"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if any(b not in ("X", "Z") for b in self.bases):
            raise ConfigError("bases must be X or Z")
        if len(set(self.priors)) != len(self.priors):
            raise ConfigError("priors must be distinct")
        for p in self.priors:
            parse_prior(p)
        if self.decoder not in ("auto", "exact", "pymatching"):
            raise ConfigError(f"unknown decoder {self.decoder!r}")

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "params" in data:
            try:
                data["params"] = NoiseParameters(**data["params"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad noise parameters: {exc}") from None
        if isinstance(data.get("priors"), str):
            data["priors"] = [p.strip() for p in data["priors"].split(",")]
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("out")
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


def parse_prior(name: str) -> tuple[str, int | None]:
    if name in ("true", "dep"):
        return name, None
    if name.startswith("aces:"):
        try:
            shots = int(float(name[5:]))
        except ValueError:
            raise ConfigError(f"bad ACES shot count in prior {name!r}") from None
        if shots < 1:
            raise ConfigError("ACES shot count must be >= 1")
        return "aces", shots
    raise ConfigError(f"unknown prior {name!r}")


def derive_seed(*parts) -> int:
    """Independent 63-bit seed for one work unit."""
    ints = [p if isinstance(p, int) else int.from_bytes(hashlib.sha256(str(p).encode()).digest()[:4], "little") for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(2, np.uint64)[0] >> np.uint64(1))


class _AcesCache:
    """One design per distance, shared across instances."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.designs = {}

    def design(self, d: int):
        if d not in self.designs:
            circuit = characterization_circuit(build_layout(d))
            reference = tuned_depolarizing_instance(self.config.params, circuit)
            design = build_design(circuit, reference_noise=reference)
            dm = compute_design_matrix(design)
            if self.config.aces_weight_iterations > 0:
                weights = optimize_shot_weights(design, dm, reference, iterations=self.config.aces_weight_iterations)
                design = design.with_weights(weights)
            self.designs[d] = (design, dm)
        return self.designs[d]


def truth_instance(config: RunConfig, seed: int, d: int) -> NoiseInstance:
    circuit = characterization_circuit(build_layout(d))
    if config.noise == "depolarizing":
        return tuned_depolarizing_instance(config.params, circuit)
    return sample_lognormal_instance(config.params, circuit, derive_seed(seed, d, "truth"))


def build_priors(config: RunConfig, truth: NoiseInstance, seed: int, d: int, aces: _AcesCache) -> dict[str, NoiseInstance]:
    circuit = characterization_circuit(build_layout(d))
    priors = {}
    for name in config.priors:
        kind, shots = parse_prior(name)
        if kind == "true":
            priors[name] = truth
        elif kind == "dep":
            priors[name] = tuned_depolarizing_instance(config.params, circuit)
        else:
            design, dm = aces.design(d)
            data = simulate_experiments(design, dm, truth, shots, derive_seed(seed, d, name))
            est = estimate_noise(design, dm, data, config.aces_method)
            priors[name] = est.to_noise_instance(circuit, name)
    return priors


@dataclass
class PointResult:
    seed: int
    distance: int
    rounds: int
    basis: str
    shots: int
    failures: dict[str, np.ndarray]  # per-shot failures per prior
    stream_hash: str

    def row(self) -> dict:
        return {
            "seed": self.seed,
            "distance": self.distance,
            "rounds": self.rounds,
            "basis": self.basis,
            "shots": self.shots,
            "failures": {k: int(v.sum()) for k, v in self.failures.items()},
            "stream_hash": self.stream_hash,
        }


def run_points(config: RunConfig, progress=None) -> list[PointResult]:
    """Sample and decode every (seed, d, rounds, basis) point."""
    aces = _AcesCache(config)
    points = []
    shots_per_basis = [config.shots // len(config.bases)] * len(config.bases)
    for i in range(config.shots % len(config.bases)):
        shots_per_basis[i] += 1
    for seed in config.seeds:
        for d in config.distances:
            stage = "noise"
            try:
                truth = truth_instance(config, seed, d)
                stage = "priors"
                priors = build_priors(config, truth, seed, d, aces)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise PipelineError(stage, f"seed {seed}, d={d}: {exc}", numerical=True) from exc
            for r in config.rounds:
                for basis, n in zip(config.bases, shots_per_basis):
                    if n == 0:
                        continue
                    ex = memory_experiment(d, r, basis)
                    try:
                        sample = sample_syndromes(ex.circuit, ex.detectors, truth, n, derive_seed(seed, d, r, basis))
                        failures = {}
                        for name, prior in priors.items():
                            graph = ex.matching_graph(prior)
                            pred = decode_batch(graph, sample.syndromes, config.decoder)
                            failures[name] = pred != sample.observable
                    except (ValueError, np.linalg.LinAlgError) as exc:
                        raise PipelineError("memory", f"seed {seed}, d={d}, r={r}, {basis}: {exc}") from exc
                    points.append(PointResult(seed, d, r, basis, n, failures, sample.stream_hash()))
                    if progress:
                        progress(points[-1])
    return points


def _pool_bases(points: list[PointResult]) -> dict[tuple[int, int, int], dict]:
    """Failures pooled over memory bases per (seed, d, r), with per-shot outcomes kept."""
    pooled: dict[tuple[int, int, int], dict] = {}
    for p in points:
        key = (p.seed, p.distance, p.rounds)
        slot = pooled.setdefault(key, {"shots": 0, "failures": {}})
        slot["shots"] += p.shots
        for name, f in p.failures.items():
            slot["failures"].setdefault(name, []).append(f)
    for slot in pooled.values():
        slot["failures"] = {k: np.concatenate(v) for k, v in slot["failures"].items()}
    return pooled


def analyse(config: RunConfig, points: list[PointResult]) -> dict:
    """Fits, paired comparisons and confusion matrices for a set of points."""
    pooled = _pool_bases(points)
    priors = list(config.priors)
    fits_eps = {}
    for seed in config.seeds:
        for d in config.distances:
            rows = [(r, pooled[(seed, d, r)]) for r in config.rounds if (seed, d, r) in pooled]
            for name in priors:
                rounds = [r for r, _ in rows]
                rates = [s["failures"][name].mean() for _, s in rows]
                shots = [s["shots"] for _, s in rows]
                try:
                    fits_eps[(seed, d, name)] = fit_epsilon(rounds, rates, shots)
                except FitError:
                    fits_eps[(seed, d, name)] = None
    eps = {
        f"{seed}/{d}/{name}": (dataclasses.asdict(f) if f else None) for (seed, d, name), f in fits_eps.items()
    }
    lambdas: dict[str, dict] = {}
    per_instance: dict[str, list] = {name: [] for name in priors}
    for name in priors:
        for seed in config.seeds:
            ds = [d for d in config.distances if fits_eps.get((seed, d, name)) and fits_eps[(seed, d, name)].eps > 0]
            if len(ds) < 2:
                per_instance[name].append(None)
                continue
            f = fit_lambda(ds, [fits_eps[(seed, d, name)].eps for d in ds], [fits_eps[(seed, d, name)].se for d in ds])
            per_instance[name].append(f)
        vals = [f.Lambda for f in per_instance[name] if f is not None]
        if vals:
            mean, se, _ = one_sided_lower(vals)
            lambdas[name] = {"mean": mean, "se": se, "per_instance": vals}
    comparisons = {}
    reference = priors[0]
    for name in priors[1:]:
        comparisons[f"{name}/{reference}"] = _compare(config, pooled, per_instance, reference, name)
    confusion = {}
    for d in config.distances:
        mats = [confusion_matrix(p.failures) for p in points if p.distance == d]
        if mats:
            total = mats[0]
            for m in mats[1:]:
                total = add_confusion(total, m)
            confusion[str(d)] = total.to_dict()
    return {"epsilon": eps, "lambda": lambdas, "comparisons": comparisons, "confusion": confusion}


def _compare(config, pooled, per_instance, ref: str, other: str) -> dict:
    """Paired comparison of ``other`` against ``ref``: Lambda difference and ratio slope."""
    diffs, slopes, ratios = [], [], {}
    for k, seed in enumerate(config.seeds):
        fa, fb = per_instance[ref][k], per_instance[other][k]
        if fa is not None and fb is not None:
            diffs.append(fa.Lambda - fb.Lambda)
        ds, values, ses = [], [], []
        for d in config.distances:
            rows = [pooled[(seed, d, r)] for r in config.rounds if (seed, d, r) in pooled]
            rounds = [r for r in config.rounds if (seed, d, r) in pooled]
            try:
                v, s = paired_log_ratio(
                    rounds,
                    [x["failures"][ref].sum() for x in rows],
                    [x["failures"][other].sum() for x in rows],
                    [(x["failures"][ref] & x["failures"][other]).sum() for x in rows],
                    [x["shots"] for x in rows],
                )
            except (FitError, ValueError, ZeroDivisionError, np.linalg.LinAlgError):
                continue
            if not (np.isfinite(v) and np.isfinite(s)):
                continue
            ds.append(d)
            values.append(v)
            ses.append(max(s, 1e-12))
            ratios.setdefault(str(d), []).append(v)
        if len(ds) >= 2:
            slopes.append(fit_ratio(ds, values, ses).beta)
    out = {}
    if diffs:
        m, se, lo = one_sided_lower(diffs)
        out["lambda_difference"] = {"mean": m, "se": se, "lower95": lo, "n": len(diffs)}
    if slopes:
        m, se, lo = one_sided_lower(slopes)
        out["log_ratio_slope"] = {"mean": m, "se": se, "lower95": lo, "n": len(slopes)}
    out["log_ratio_by_distance"] = {
        d: {"mean": float(np.mean(v)), "ratio": float(np.exp(np.mean(v))), "n": len(v)} for d, v in ratios.items()
    }
    return out


def pooled_ratio(points: list[PointResult], ref: str, other: str, distances=None) -> tuple[float, float]:
    """Ratio of total failures ``other / ref`` pooled over points, with a paired standard error."""
    selected = [p for p in points if distances is None or p.distance in distances]
    da = np.concatenate([p.failures[ref] for p in selected]).astype(float)
    db = np.concatenate([p.failures[other] for p in selected]).astype(float)
    fa, fb = da.sum(), db.sum()
    if fa == 0:
        raise FitError("reference prior has no failures")
    # Paired delta method on the ratio of sums.
    ratio = fb / fa
    resid = db - ratio * da
    var = resid.size * resid.var() / fa**2
    return float(ratio), float(math.sqrt(var))


def pooled_log_ratio(points: list[PointResult], ref: str, other: str, distances=None) -> tuple[float, float]:
    """``log(eps_other / eps_ref)`` from counts pooled over instances and bases.

    Each distance gives a paired estimate from its per-round pooled counts;
    distances are combined with inverse-variance weights.
    """
    counts: dict[tuple[int, int], list[float]] = {}
    for p in points:
        if distances is not None and p.distance not in distances:
            continue
        a, b = p.failures[ref], p.failures[other]
        slot = counts.setdefault((p.distance, p.rounds), [0.0, 0.0, 0.0, 0.0])
        slot[0] += a.sum()
        slot[1] += b.sum()
        slot[2] += (a & b).sum()
        slot[3] += a.size
    values, weights = [], []
    for d in sorted({d for d, _ in counts}):
        rounds = sorted(r for dd, r in counts if dd == d)
        rows = [counts[(d, r)] for r in rounds]
        v, s = paired_log_ratio(rounds, *(np.array([row[k] for row in rows]) for k in range(4)))
        values.append(v)
        weights.append(1.0 / max(s, 1e-12) ** 2)
    if not values:
        raise FitError("no points to compare")
    w = np.array(weights)
    return float(np.dot(w, values) / w.sum()), float(1.0 / math.sqrt(w.sum()))


def run_pipeline(config: RunConfig, progress=None) -> dict:
    """Run every point, analyse, and write reports when ``config.out`` is set."""
    points = run_points(config, progress)
    try:
        analysis = analyse(config, points)
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError("fit", str(exc), numerical=True) from exc
    report = {
        "version": REPORT_VERSION,
        "config": config.to_dict(),
        "points": [p.row() for p in points],
        **analysis,
    }
    if config.out:
        write_reports(report, Path(config.out))
    return report


def report_json(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=1, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def points_csv(report: dict) -> str:
    buf = io.StringIO()
    priors = report["config"]["priors"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "distance", "rounds", "basis", "shots", *[f"failures_{p}" for p in priors], "stream_hash"])
    for row in report["points"]:
        writer.writerow(
            [row["seed"], row["distance"], row["rounds"], row["basis"], row["shots"],
             *[row["failures"][p] for p in priors], row["stream_hash"]]
        )
    return buf.getvalue()


def ratio_csv(report: dict) -> str:
    """Plot data: mean log-ratio of each prior against the first, per distance."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["comparison", "distance", "mean_log_ratio", "ratio", "instances"])
    for name, comp in sorted(report["comparisons"].items()):
        for d, v in sorted(comp["log_ratio_by_distance"].items(), key=lambda kv: int(kv[0])):
            writer.writerow([name, d, repr(v["mean"]), repr(v["ratio"]), v["n"]])
    return buf.getvalue()


def write_reports(report: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(report))
    (out / "points.csv").write_text(points_csv(report))
    (out / "ratios.csv").write_text(ratio_csv(report))
