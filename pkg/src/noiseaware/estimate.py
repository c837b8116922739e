"""ACES estimation: simulate experiments, solve the log system, project channels.

Each design row ``mu`` has a circuit eigenvalue ``Lambda_mu`` estimated as
the mean of ``+-1`` outcomes relative to the ideal value. Rows sharing a
group were read from the same shots, so their estimates are correlated; the
per-group empirical covariance is kept for generalized least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .circuit import Circuit, Gate, GateKey, Layer
from .design import (
    PREP_ERROR,
    DesignMatrix,
    EigenvalueIndex,
    ExperimentDesign,
    gauge_map,
    model_row_covariance,
    predicted_row_values,
    reduced_matrix,
    _row_mask,
)
from .frame import FrameSimulator, NoisePlan, _compile
from .noise import NoiseInstance, key_to_str
from .pauli import PauliChannel, eigenvalue_jacobian, pauli_labels
from .projection import ProjectionResult, project_simplex_mahalanobis

CENSOR_FACTOR = 10.0


class CensoringRankError(ValueError):
    """Raised when censored rows leave some parameters unidentifiable."""

    def __init__(self, message: str, lost: list[str]):
        super().__init__(message)
        self.lost = lost


@dataclass
class ExperimentData:
    """Row estimates with per-group single-shot outcome covariance."""

    lambda_hat: np.ndarray  # (rows,)
    shots: np.ndarray  # (rows,)
    groups: list[np.ndarray]  # row indices per group
    group_cov: list[np.ndarray]  # single-shot covariance of the +-1 outcomes

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat.tolist(),
            "shots": self.shots.tolist(),
            "groups": [g.tolist() for g in self.groups],
            "group_cov": [c.tolist() for c in self.group_cov],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentData:
        return cls(
            np.array(data["lambda_hat"], dtype=float),
            np.array(data["shots"], dtype=np.int64),
            [np.array(g, dtype=np.intp) for g in data["groups"]],
            [np.array(c, dtype=float).reshape(len(g), len(g)) for g, c in zip(data["groups"], data["group_cov"])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _groups(design: ExperimentDesign) -> list[np.ndarray]:
    out: dict[int, list[int]] = {}
    for r, e in enumerate(design.experiments):
        out.setdefault(e.group, []).append(r)
    return [np.array(v, dtype=np.intp) for _, v in sorted(out.items())]


def _chi(masks: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    """``(-1)^{|mask & pattern|}`` for every (mask, pattern) pair."""
    both = masks[:, None] & patterns[None, :]
    parity = np.zeros(both.shape, dtype=np.int64)
    while np.any(both):
        parity ^= both & 1
        both >>= 1
    return 1 - 2 * parity


def _stats_from_counts(masks: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row means and single-shot covariance from flip-pattern counts."""
    patterns = np.arange(counts.size)
    chi = _chi(masks, patterns).astype(float)  # (rows, patterns)
    n = counts.sum()
    freq = counts / n
    mean = chi @ freq
    second = (chi * freq) @ chi.T
    return mean, second - np.outer(mean, mean)


def _check_shots(design: ExperimentDesign, total_shots: int) -> np.ndarray:
    shots = design.batch_shots(total_shots)
    for b, batch in enumerate(design.batches):
        if batch.rows and shots[b] <= 0:
            raise ValueError(f"batch {b} ({batch.layer}, depth {batch.depth}) receives zero shots")
    return shots


def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(batch)]))


def simulate_experiments(
    design: ExperimentDesign,
    dm: DesignMatrix,
    truth: NoiseInstance,
    total_shots: int,
    seed: int,
    backend: str = "analytic",
) -> ExperimentData:
    """Sample outcome statistics for every row of ``design`` under ``truth``.

    ``analytic`` draws each group's joint flip pattern from its exact
    distribution, built from the model circuit eigenvalues; ``frame``
    propagates sampled Pauli frames through the repeated layer.
    """
    if backend not in ("analytic", "frame"):
        raise ValueError(f"unknown backend {backend!r}")
    batch_shots = _check_shots(design, total_shots)
    groups = _groups(design)
    by_batch: dict[int, list[np.ndarray]] = {}
    for g in groups:
        by_batch.setdefault(design.experiments[g[0]].batch, []).append(g)
    n_rows = len(design.experiments)
    lam = np.empty(n_rows)
    shots = np.empty(n_rows, dtype=np.int64)
    covs: dict[int, np.ndarray] = {}
    values = predicted_row_values(design, dm, truth) if backend == "analytic" else None
    for b in range(len(design.batches)):
        rng = _batch_rng(seed, b)
        n = int(batch_shots[b])
        batch_groups = by_batch.get(b, [])
        if backend == "analytic":
            stats = [_analytic_group(design, g, values, n, rng) for g in batch_groups]
        else:
            stats = _frame_batch(design, b, batch_groups, truth, n, rng)
        for g, (mean, cov) in zip(batch_groups, stats):
            lam[g] = mean
            shots[g] = n
            covs[int(g[0])] = cov
    return ExperimentData(lam, shots, groups, [covs[int(g[0])] for g in groups])


def simulate_batch(
    design: ExperimentDesign,
    dm: DesignMatrix,
    truth: NoiseInstance,
    batch: int,
    shots: int,
    seed: int,
    backend: str = "frame",
) -> tuple[np.ndarray, np.ndarray]:
    """Rows of one batch and their estimated circuit eigenvalues from ``shots`` shots."""
    if backend not in ("analytic", "frame"):
        raise ValueError(f"unknown backend {backend!r}")
    if shots <= 0:
        raise ValueError("shots must be positive")
    groups = [g for g in _groups(design) if design.experiments[g[0]].batch == batch]
    rng = _batch_rng(seed, batch)
    if backend == "analytic":
        values = predicted_row_values(design, dm, truth)
        stats = [_analytic_group(design, g, values, shots, rng) for g in groups]
    else:
        stats = _frame_batch(design, batch, groups, truth, shots, rng)
    rows = np.concatenate(groups) if groups else np.zeros(0, dtype=np.intp)
    means = np.concatenate([m for m, _ in stats]) if stats else np.zeros(0)
    return rows, means


def _analytic_group(design, rows, values, n, rng):
    m = len(design.experiments[rows[0]].qubits)
    masks = np.array([_row_mask(design.experiments[r]) for r in rows], dtype=np.int64)
    expect = np.zeros(2**m)
    expect[0] = 1.0
    expect[masks] = values[rows]
    patterns = np.arange(2**m)
    # Inverse Fourier transform over subsets of the group's qubits.
    probs = _chi(patterns, patterns).astype(float) @ expect / 2**m
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    counts = rng.multinomial(n, probs)
    return _stats_from_counts(masks, counts)


def _frame_batch(design, b, batch_groups, truth, n, rng):
    batch = design.batches[b]
    circuit = design.circuit
    layer = design.layers[batch.layer]
    channel_layer = Layer(layer.name, tuple(g for g in layer.gates if g.has_channel))
    sub = Circuit(circuit.n_qubits, (channel_layer,))
    plan = NoisePlan(sub, truth)
    compiled = _compile(sub)[0]
    one_q, two_q, _, _ = plan.layers[0]
    sim = FrameSimulator(circuit.n_qubits, n)
    resets, meas = _flip_tables(circuit, truth)
    for q, letter in batch.prepared:
        err = PREP_ERROR[letter]
        hit = rng.random(n) < resets.get(q, 0.0)
        if err == "X":
            sim.x[q] ^= hit
        else:
            sim.z[q] ^= hit
    for _ in range(batch.depth):
        for group in (one_q, two_q):
            if group is not None:
                group.sample(rng, sim)
        sim._apply_compiled(compiled, None)
    basis = dict(batch.measured)
    flips = {}
    for q, letter in batch.measured:
        anti = sim.z[q] if letter == "X" else sim.x[q] if letter == "Z" else sim.x[q] ^ sim.z[q]
        flips[q] = anti ^ (rng.random(n) < meas.get(q, 0.0))
    out = []
    for rows in batch_groups:
        qubits = design.experiments[rows[0]].qubits
        pattern = np.zeros(n, dtype=np.int64)
        for i, q in enumerate(qubits):
            assert q in basis
            pattern |= flips[q].astype(np.int64) << i
        counts = np.bincount(pattern, minlength=2 ** len(qubits))
        masks = np.array([_row_mask(design.experiments[r]) for r in rows], dtype=np.int64)
        out.append(_stats_from_counts(masks, counts))
    return out


def _flip_tables(circuit: Circuit, noise: NoiseInstance):
    resets, meas = {}, {}
    for g in circuit.unique_gates():
        if g.kind == "ResetZ":
            resets.setdefault(g.targets[0], noise.flip(g))
        elif g.kind == "MeasureZ":
            meas.setdefault(g.targets[0], noise.flip(g))
    return resets, meas


# Least squares on log-eigenvalues.


@dataclass
class CovarianceModel:
    """Precision of the retained parameters in log and eigenvalue coordinates.

    ``precision_log = A^T Omega^{-1} A`` (gauge-reduced ``A``);
    eigenvalue-coordinate precision is ``D^{-1} precision_log D^{-1}`` with
    ``D = diag(lambda)``.
    """

    retained: list[int]
    lambdas: np.ndarray  # retained eigenvalues
    precision_log: np.ndarray

    @cached_property
    def covariance_log(self) -> np.ndarray:
        return sla.cho_solve(sla.cho_factor(self.precision_log), np.eye(self.precision_log.shape[0]))

    @cached_property
    def precision(self) -> np.ndarray:
        inv = 1.0 / self.lambdas
        return self.precision_log * np.outer(inv, inv)

    @cached_property
    def covariance(self) -> np.ndarray:
        return self.covariance_log * np.outer(self.lambdas, self.lambdas)

    def gate_probability_precision(self, positions: np.ndarray, n_qubits: int) -> np.ndarray:
        """Precision of a gate's error probabilities from its eigenvalue block.

        With ``lambda = 1 + J p`` the block transforms as ``J^T P J``.
        """
        jac = eigenvalue_jacobian(n_qubits)
        block = self.precision[np.ix_(positions, positions)]
        return jac.T @ block @ jac


def probability_map(design: ExperimentDesign, retained: list[int]) -> sp.csr_matrix:
    """Block-diagonal ``W`` with ``J^T`` on every gate block, identity on SPAM.

    ``W Sigma^{-1} W^T`` is the precision of identity-omitted error
    probabilities when ``Sigma^{-1}`` is the eigenvalue precision.
    """
    pos = {c: k for k, c in enumerate(retained)}
    blocks_r, blocks_c, vals = [], [], []
    covered = set()
    for g in design.gates:
        labels = pauli_labels(g.arity)[1:]
        idx = np.array([pos[design.column_index[EigenvalueIndex.for_gate(g, lbl)]] for lbl in labels])
        jt = eigenvalue_jacobian(g.arity).T
        rr, cc = np.meshgrid(idx, idx, indexing="ij")
        blocks_r.append(rr.ravel())
        blocks_c.append(cc.ravel())
        vals.append(jt.ravel())
        covered.update(idx.tolist())
    rest = np.array(sorted(set(range(len(retained))) - covered), dtype=np.intp)
    blocks_r.append(rest)
    blocks_c.append(rest)
    vals.append(np.ones(rest.size))
    n = len(retained)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(blocks_r), np.concatenate(blocks_c))), shape=(n, n))


def orbit_covariance(cov: CovarianceModel, orbit_matrix: sp.spmatrix) -> np.ndarray:
    """Covariance of orbit-averaged log-eigenvalues (``M Sigma M^T``).

    ``orbit_matrix`` acts on the retained columns.
    """
    m = orbit_matrix.toarray() if sp.issparse(orbit_matrix) else np.asarray(orbit_matrix)
    return m @ cov.covariance_log @ m.T


@dataclass
class LogSolution:
    log_values: np.ndarray  # all design columns
    covariance: CovarianceModel
    used_rows: np.ndarray
    method: str

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


def _empirical_blocks(data: ExperimentData) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-group single-shot covariance of the log estimates from the sample itself."""
    # Rows with Lambda_hat == 0 are always censored; keep their scale finite.
    lam = np.where(data.lambda_hat == 0, 1.0, data.lambda_hat)
    return [(g, cov / np.outer(lam[g], lam[g])) for g, cov in zip(data.groups, data.group_cov)]


def _row_blocks(blocks, shots: np.ndarray, keep: np.ndarray, method: str) -> sp.csr_matrix:
    """Inverse covariance of kept rows' log estimates as a sparse matrix."""
    n_rows = keep.size
    n = shots.astype(float)
    rows_i, cols_i, vals = [], [], []
    for g, single in blocks:
        sel = keep[g]
        if not np.any(sel):
            continue
        rows = g[sel]
        omega = single[np.ix_(sel, sel)] / n[rows][:, None]
        # A row that never flipped has zero sample variance; floor at one flip's worth.
        floor = 1.0 / n[rows] ** 2
        if method == "wls":
            inv = np.diag(1.0 / np.maximum(np.diag(omega), floor))
        else:
            # Few flips can make the covariance singular; clip its spectrum.
            w, v = np.linalg.eigh(0.5 * (omega + omega.T))
            inv = (v / np.maximum(w, floor.min())) @ v.T
        rr, cc = np.meshgrid(rows, rows, indexing="ij")
        rows_i.append(rr.ravel())
        cols_i.append(cc.ravel())
        vals.append(inv.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))), shape=(n_rows, n_rows)
    )


def _weighted_solve(design, a_kept, winv_kept, y, retained):
    info = (a_kept.T @ winv_kept @ a_kept).toarray()
    info = 0.5 * (info + info.T)
    rhs = a_kept.T @ (winv_kept @ y)
    try:
        chol = sla.cho_factor(info)
    except np.linalg.LinAlgError:
        raise CensoringRankError(
            "censoring left the system rank deficient", _lost_parameters(design, a_kept, retained)
        ) from None
    theta = sla.cho_solve(chol, rhs)
    if not np.all(np.isfinite(theta)):
        raise CensoringRankError(
            "censoring left the system rank deficient", _lost_parameters(design, a_kept, retained)
        )
    return theta, info


def solve_log_system(
    design: ExperimentDesign,
    dm: DesignMatrix,
    data: ExperimentData,
    method: str = "gls",
    weights: str = "model",
) -> LogSolution:
    """Weighted (``wls``) or generalized (``gls``) least squares for log-eigenvalues.

    Rows with ``Lambda_hat <= 10 / N`` are censored; WLS keeps only the
    diagonal of the row covariance, GLS the full per-group blocks.

    With ``weights="model"`` the covariance is evaluated at the row values
    predicted by a preliminary empirical-WLS fit (two-stage feasible GLS).
    Sample covariances of low-shot rows are correlated with the row means
    they weight, which biases the estimate; ``"empirical"`` uses them directly.
    """
    if method not in ("wls", "gls"):
        raise ValueError(f"unknown method {method!r}")
    if weights not in ("model", "empirical"):
        raise ValueError(f"unknown weights {weights!r}")
    lam = data.lambda_hat
    keep = lam > CENSOR_FACTOR / data.shots
    a_red = reduced_matrix(design, dm)
    t_map, retained = gauge_map(design)
    if not keep.any():
        raise CensoringRankError("every row was censored", [str(design.columns[i]) for i in retained])
    kept = np.flatnonzero(keep)
    a_kept = a_red[kept]
    y = np.log(lam[kept])
    empirical = _empirical_blocks(data)
    if weights == "empirical":
        blocks = empirical
    else:
        first = _row_blocks(empirical, data.shots, keep, "wls")[kept][:, kept]
        theta0, _ = _weighted_solve(design, a_kept, first, y, retained)
        fitted = np.exp(np.clip(a_red @ theta0, None, 0.0))
        blocks = model_row_covariance(design, fitted)
    winv = _row_blocks(blocks, data.shots, keep, method)[kept][:, kept]
    theta, info = _weighted_solve(design, a_kept, winv, y, retained)
    log_full = t_map @ theta
    cov = CovarianceModel(list(retained), np.exp(theta), info)
    return LogSolution(np.asarray(log_full), cov, kept, method)


def _lost_parameters(design, a_kept, retained) -> list[str]:
    gram = (a_kept.T @ a_kept).toarray()
    evals, evecs = np.linalg.eigh(gram)
    null = evecs[:, evals <= 1e-9 * max(evals.max(), 1.0)]
    lost = np.flatnonzero(np.abs(null).max(axis=1, initial=0.0) > 1e-6) if null.size else []
    return [str(design.columns[retained[i]]) for i in lost]


# Channel estimates.


@dataclass
class NoiseEstimate:
    """Projected channels, SPAM eigenvalues and raw solution of one estimate."""

    channels: dict[GateKey, PauliChannel]
    raw_probabilities: dict[GateKey, np.ndarray]
    projections: dict[GateKey, ProjectionResult]
    prep: dict[int, float]
    meas: dict[tuple[int, str], float]
    solution: LogSolution
    meta: dict = field(default_factory=dict)

    @property
    def n_fallbacks(self) -> int:
        return sum(r.fallback for r in self.projections.values())

    def total_error(self, key: GateKey) -> float:
        return self.channels[key].total_error

    def to_noise_instance(self, circuit: Circuit, label: str = "aces") -> NoiseInstance:
        """Prior for ``circuit``: estimated channels plus SPAM flip rates.

        Measurement flips use the Z-basis measurement eigenvalue and reset
        flips the preparation eigenvalue, each through ``(1 - e) / 2``.
        Gates the estimate did not cover raise ``KeyError``.
        """
        channels, flips = {}, {}
        for g in circuit.unique_gates():
            if g.has_channel:
                if g.key not in self.channels:
                    raise KeyError(f"estimate has no channel for {key_to_str(g.key)}")
                channels[g.key] = self.channels[g.key]
            else:
                q = g.targets[0]
                e = self.meas.get((q, "Z"), 1.0) if g.kind == "MeasureZ" else self.prep.get(q, 1.0)
                flips[g.key] = float(np.clip((1 - e) / 2, 0.0, 0.5))
        return NoiseInstance(channels, flips, None, label, dict(self.meta))


def estimate_noise(
    design: ExperimentDesign,
    dm: DesignMatrix,
    data: ExperimentData,
    method: str = "gls",
    project: bool = True,
) -> NoiseEstimate:
    """Solve for eigenvalues, then project each gate's channel onto the simplex.

    Each gate uses the Mahalanobis metric given by its diagonal block of the
    probability-coordinate precision. SPAM parameters are not projected.
    """
    sol = solve_log_system(design, dm, data, method)
    values = sol.values
    pos = {c: k for k, c in enumerate(sol.covariance.retained)}
    channels, raw, projections = {}, {}, {}
    for g in design.gates:
        labels = pauli_labels(g.arity)[1:]
        cols = [design.column_index[EigenvalueIndex.for_gate(g, lbl)] for lbl in labels]
        lam = values[cols]
        jac = eigenvalue_jacobian(g.arity)
        p_raw = np.linalg.solve(jac, lam - 1.0)
        raw[g.key] = p_raw
        if project:
            q = sol.covariance.gate_probability_precision(np.array([pos[c] for c in cols]), g.arity)
            res = project_simplex_mahalanobis(p_raw, q)
        else:
            res = ProjectionResult(p_raw, 0.0, 0, False)
        projections[g.key] = res
        channels[g.key] = PauliChannel.from_errors(res.p, g.arity, check=project)
    prep, meas = {}, {}
    for i, c in enumerate(design.columns):
        if c.kind == "prep":
            prep[c.qubit] = float(values[i])
        elif c.kind == "meas":
            meas[(c.qubit, c.label)] = float(values[i])
    return NoiseEstimate(channels, raw, projections, prep, meas, sol, {"method": method})
