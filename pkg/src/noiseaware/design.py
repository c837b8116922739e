"""ACES experiment design: repeated-layer experiments and the design matrix.

Recipe
------
For every layer containing noisy unitary gates and every depth ``t`` the
layer is repeated ``t`` times. Batch ``k`` prepares, on each gate, its
``k``-th non-identity local Pauli as a product eigenstate (identity letters
are prepared in Z). Every stabilizer of that product state whose image stays
diagonal in the final measurement basis gives one row, so rows in a batch
that share a gate are estimated from the same shots and are correlated.
Qubits outside channel gates are left alone. Three SPAM batches prepare and
immediately measure every qubit in X, Y and Z.

Columns are gate eigenvalues ``(gate, Pauli)`` plus, per qubit, one
preparation eigenvalue and one measurement eigenvalue per basis.

SPAM gauge
----------
Preparation and measurement eigenvalues of a qubit trade off exactly against
each other (shifting ``log prep`` by ``c`` and every ``log meas`` by ``-c``
can be absorbed into gate eigenvalues whose Pauli support changes on that
qubit), so they are not separately identifiable. Estimation fixes the gauge
by ``log prep(q) = rho_q * log meas_Z(q)`` with ``rho_q`` taken from the
reference noise. Orbit products and per-gate total errors are invariant
under this gauge.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .circuit import Circuit, Gate, GateKey, Layer, gate_orbits, local_table
from .noise import NoiseInstance, key_from_str, key_to_str
from .pauli import PauliString, channel_to_eigenvalues, pauli_labels

SPAM_LAYER = "spam"
BASES = ("X", "Y", "Z")
# Letter applied by a preparation error: anticommutes with the prepared letter.
PREP_ERROR = {"X": "Z", "Y": "Z", "Z": "X"}


@dataclass(frozen=True, order=True)
class EigenvalueIndex:
    """A design column: a gate eigenvalue, a preparation or a measurement eigenvalue."""

    kind: str  # "gate", "prep" or "meas"
    gate: GateKey | tuple = ()
    label: str = ""  # Pauli label on the gate, or measurement basis
    qubit: int = -1

    @classmethod
    def for_gate(cls, gate: Gate, label: str) -> EigenvalueIndex:
        return cls("gate", gate.key, label)

    @classmethod
    def prep(cls, qubit: int) -> EigenvalueIndex:
        return cls("prep", (), "", qubit)

    @classmethod
    def meas(cls, qubit: int, basis: str) -> EigenvalueIndex:
        return cls("meas", (), basis, qubit)

    @property
    def is_spam(self) -> bool:
        return self.kind != "gate"

    def __str__(self) -> str:
        if self.kind == "gate":
            return f"gate {key_to_str(self.gate)} {self.label}"
        if self.kind == "prep":
            return f"prep {self.qubit}"
        return f"meas {self.qubit} {self.label}"

    @classmethod
    def parse(cls, text: str) -> EigenvalueIndex:
        kind, _, rest = text.partition(" ")
        if kind == "gate":
            key, _, label = rest.rpartition(" ")
            return cls("gate", key_from_str(key), label)
        if kind == "prep":
            return cls.prep(int(rest))
        q, basis = rest.split()
        return cls.meas(int(q), basis)


@dataclass(frozen=True)
class ExperimentCircuit:
    """One observable through ``layer`` repeated ``depth`` times.

    ``prepared``/``measured`` are local labels on ``qubits``; ``sign`` is the
    ideal expectation of the measured observable.
    """

    layer: str
    depth: int
    qubits: tuple[int, ...]
    prepared: str
    measured: str
    sign: int
    gate: GateKey | None
    batch: int
    group: int  # rows sharing a group come from the same shots and qubits

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    def _full(self, n: int, local: str, sign: int = 1) -> PauliString:
        label = ["I"] * n
        for q, ch in zip(self.qubits, local):
            label[q] = ch
        return PauliString.from_label("".join(label), sign)

    def prepared_pauli(self, n: int) -> PauliString:
        return self._full(n, self.prepared)

    def measured_pauli(self, n: int) -> PauliString:
        return self._full(n, self.measured, self.sign)


@dataclass(frozen=True)
class ExperimentBatch:
    layer: str
    depth: int
    index: int
    prepared: tuple[tuple[int, str], ...]  # (qubit, basis)
    measured: tuple[tuple[int, str], ...]
    rows: tuple[int, ...]


@dataclass
class ExperimentDesign:
    circuit: Circuit
    depths: tuple[int, ...]
    experiments: list[ExperimentCircuit]
    batches: list[ExperimentBatch]
    columns: list[EigenvalueIndex]
    gauge: dict[int, float]
    shot_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.shot_weights is None:
            self.shot_weights = np.full(len(self.batches), 1 / len(self.batches))
        self.shot_weights = np.asarray(self.shot_weights, dtype=float)
        if self.shot_weights.shape != (len(self.batches),):
            raise ValueError("one shot weight per batch is required")
        if np.any(self.shot_weights < 0) or abs(self.shot_weights.sum() - 1) > 1e-9:
            raise ValueError("shot weights must be non-negative and sum to 1")

    @cached_property
    def layers(self) -> dict[str, Layer]:
        out = {layer.name: layer for layer in self.circuit.unique_layers()}
        out[SPAM_LAYER] = Layer(SPAM_LAYER, ())
        return out

    @cached_property
    def column_index(self) -> dict[EigenvalueIndex, int]:
        return {c: i for i, c in enumerate(self.columns)}

    @cached_property
    def gates(self) -> list[Gate]:
        seen: dict[GateKey, Gate] = {}
        for g in self.circuit.unique_gates():
            if g.has_channel:
                seen.setdefault(g.key, g)
        return list(seen.values())

    def with_weights(self, weights) -> ExperimentDesign:
        return ExperimentDesign(
            self.circuit, self.depths, self.experiments, self.batches, self.columns, self.gauge, weights
        )

    def batch_shots(self, total_shots: int) -> np.ndarray:
        return np.round(self.shot_weights * total_shots).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "depths": list(self.depths),
            "columns": [str(c) for c in self.columns],
            "gauge": {str(q): r for q, r in sorted(self.gauge.items())},
            "batches": [
                {
                    "layer": b.layer,
                    "depth": b.depth,
                    "index": b.index,
                    "weight": float(w),
                    "prepared": [list(x) for x in b.prepared],
                    "measured": [list(x) for x in b.measured],
                    "rows": [
                        {
                            "qubits": list(self.experiments[r].qubits),
                            "prepared": self.experiments[r].prepared,
                            "measured": self.experiments[r].measured,
                            "sign": self.experiments[r].sign,
                        }
                        for r in b.rows
                    ],
                }
                for b, w in zip(self.batches, self.shot_weights)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


class RankDeficientDesign(ValueError):
    """Raised when the gauge-fixed design matrix lacks full column rank."""

    def __init__(self, message: str, deficient: list[list[str]]):
        super().__init__(message)
        self.deficient = deficient


def default_depths(reference_noise: NoiseInstance | None = None, r2: float | None = None) -> tuple[int, ...]:
    """Depths ``(1, t, t + 1)`` with ``t = round(1 / (4 r2))`` clipped to [4, 64]."""
    if r2 is None:
        totals = [c.total_error for c in (reference_noise.channels.values() if reference_noise else [])
                  if c.n_qubits == 2]
        r2 = float(np.mean(totals)) if totals else 0.004
    t_mid = int(np.clip(round(1 / (4 * r2)) if r2 > 0 else 64, 4, 64))
    return (1, t_mid, t_mid + 1)


def _propagate_local(kind: str, label: str, steps: int) -> tuple[list[str], str, int]:
    """Labels entering the gate at each step, the final label and sign."""
    table = local_table(kind)
    seq, sign = [], 1
    for _ in range(steps):
        seq.append(label)
        s, label = table[label]
        sign *= s
    return seq, label, sign


def _sub_labels(prep_letters: str) -> list[str]:
    """Non-identity stabilizer labels of a product state with these letters."""
    n = len(prep_letters)
    out = []
    for mask in range(1, 2**n):
        out.append("".join(ch if (mask >> (n - 1 - i)) & 1 else "I" for i, ch in enumerate(prep_letters)))
    return out


def _spam_reference(noise: NoiseInstance, circuit: Circuit) -> tuple[dict[int, float], dict[int, float]]:
    """Per-qubit reset and measurement flip probabilities (0 when absent)."""
    resets, meas = {}, {}
    for g in circuit.unique_gates():
        if g.kind == "ResetZ":
            resets.setdefault(g.targets[0], noise.flip(g))
        elif g.kind == "MeasureZ":
            meas.setdefault(g.targets[0], noise.flip(g))
    return resets, meas


def gauge_ratios(circuit: Circuit, reference_noise: NoiseInstance | None) -> dict[int, float]:
    """``rho_q = log(1 - 2 r_q) / log(1 - 2 m_q)`` from the reference noise (1 if undefined)."""
    rho = {q: 1.0 for q in range(circuit.n_qubits)}
    if reference_noise is None:
        return rho
    resets, meas = _spam_reference(reference_noise, circuit)
    for q in range(circuit.n_qubits):
        r, m = resets.get(q, 0.0), meas.get(q, 0.0)
        if 0 < r < 0.5 and 0 < m < 0.5:
            rho[q] = float(np.log1p(-2 * r) / np.log1p(-2 * m))
    return rho


def build_design(
    target: Circuit,
    depths=None,
    reference_noise: NoiseInstance | None = None,
    check_rank: bool = True,
) -> ExperimentDesign:
    """Experiments covering every channel gate of ``target``'s distinct layers."""
    if depths is None:
        depths = default_depths(reference_noise)
    depths = tuple(sorted(set(int(t) for t in depths)))
    if not depths or 1 not in depths:
        raise ValueError("depths must be non-empty and include 1")
    if min(depths) < 1:
        raise ValueError("depths must be >= 1")

    experiments: list[ExperimentCircuit] = []
    batches: list[ExperimentBatch] = []
    group = 0

    def add_batch(layer_name, t, k, items):
        # items: list of (gate or None, qubits, prepared letters, kind)
        nonlocal group
        rows, prepared, measured = [], [], []
        for gate, qubits, letters, kind in items:
            cands = []
            for sub in _sub_labels(letters):
                if kind is None:
                    seq, final, sign = [], sub, 1
                else:
                    seq, final, sign = _propagate_local(kind, sub, t)
                cands.append((sub, final, sign))
            # Measurement bases come from the full prepared label's image.
            full_final = cands[-1][1]
            bases = "".join(ch if ch != "I" else "Z" for ch in full_final)
            for sub, final, sign in cands:
                if all(f == "I" or f == b for f, b in zip(final, bases)):
                    rows.append(len(experiments))
                    experiments.append(
                        ExperimentCircuit(
                            layer_name, t, tuple(qubits), sub, final, sign,
                            gate.key if gate is not None else None, len(batches), group,
                        )
                    )
            prepared.extend(zip(qubits, letters))
            measured.extend(zip(qubits, bases))
            group += 1
        batches.append(ExperimentBatch(layer_name, t, k, tuple(prepared), tuple(measured), tuple(rows)))

    for layer in target.unique_layers():
        gates = [g for g in layer.gates if g.has_channel]
        if not gates:
            continue
        n_batches = 15 if any(g.arity == 2 for g in gates) else 3
        for t in depths:
            for k in range(n_batches):
                items = []
                for g in gates:
                    labels = pauli_labels(g.arity)[1:]
                    label = labels[k % len(labels)]
                    letters = "".join(ch if ch != "I" else "Z" for ch in label)
                    items.append((g, g.targets, letters, g.kind))
                add_batch(layer.name, t, k, items)

    for k, basis in enumerate(BASES):
        items = [(None, (q,), basis, None) for q in range(target.n_qubits)]
        add_batch(SPAM_LAYER, 1, k, items)

    columns = _columns(target, experiments)
    design = ExperimentDesign(target, depths, experiments, batches, columns, gauge_ratios(target, reference_noise))
    if check_rank:
        check_design_rank(design, compute_design_matrix(design))
    return design


def _columns(target: Circuit, experiments: list[ExperimentCircuit]) -> list[EigenvalueIndex]:
    cols: list[EigenvalueIndex] = []
    for g in target.unique_gates():
        if g.has_channel:
            cols.extend(EigenvalueIndex.for_gate(g, lbl) for lbl in pauli_labels(g.arity)[1:])
    qubits = sorted({q for e in experiments for q in e.qubits})
    for q in qubits:
        cols.append(EigenvalueIndex.prep(q))
        cols.extend(EigenvalueIndex.meas(q, b) for b in BASES)
    return cols


@dataclass(frozen=True)
class DesignMatrix:
    """Sparse integer exponents: ``log Lambda = A @ log(lambda)``."""

    matrix: sp.csr_matrix
    columns: tuple[EigenvalueIndex, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def to_coo_text(self) -> str:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{coo.row[i]} {coo.col[i]} {coo.data[i]}" for i in order]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coo_text(cls, text: str, columns) -> DesignMatrix:
        rows, cols, vals = [], [], []
        for line in text.split("\n"):
            if line.strip():
                r, c, v = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(int(v))
        n_rows = max(rows) + 1 if rows else 0
        m = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, len(columns)), dtype=np.int64)
        return cls(m, tuple(columns))


def compute_design_matrix(design: ExperimentDesign) -> DesignMatrix:
    """Exponent of every column in every experiment's circuit eigenvalue.

    The observable of a row lives on one gate's targets and each gate of a
    layer maps its own support to itself, so propagating it with the gate's
    local conjugation table is the same as propagating through the layer.
    """
    index = design.column_index
    layers = design.layers
    rows, cols, vals = [], [], []
    for r, e in enumerate(design.experiments):
        counts: dict[int, int] = {}
        if e.gate is not None:
            gate = Gate(*e.gate)
            layer = layers[e.layer]
            if gate not in layer.gates:
                raise ValueError(f"experiment gate {gate} not in layer {e.layer!r}")
            seq, final, _ = _propagate_local(gate.kind, e.prepared, e.depth)
            if final != e.measured:
                raise ValueError("observable annihilated or mislabeled in experiment")
            for lbl in seq:
                if lbl.strip("I") == "":
                    raise ValueError("observable annihilated in experiment")
                c = index[EigenvalueIndex.for_gate(gate, lbl)]
                counts[c] = counts.get(c, 0) + 1
        for q, ch in zip(e.qubits, e.prepared):
            if ch != "I":
                c = index[EigenvalueIndex.prep(q)]
                counts[c] = counts.get(c, 0) + 1
        for q, ch in zip(e.qubits, e.measured):
            if ch != "I":
                c = index[EigenvalueIndex.meas(q, ch)]
                counts[c] = counts.get(c, 0) + 1
        for c, v in counts.items():
            rows.append(r)
            cols.append(c)
            vals.append(v)
    m = sp.csr_matrix(
        (np.array(vals, dtype=np.int64), (rows, cols)),
        shape=(len(design.experiments), len(design.columns)),
    )
    return DesignMatrix(m, tuple(design.columns))


def gauge_map(design: ExperimentDesign) -> tuple[sp.csr_matrix, list[int]]:
    """Map retained log-parameters to all columns: ``log_full = T @ log_retained``.

    Preparation columns are dropped; ``log prep(q) = rho_q * log meas_Z(q)``.
    Returns ``T`` and the indices of retained columns.
    """
    cols = design.columns
    index = design.column_index
    retained = [i for i, c in enumerate(cols) if c.kind != "prep"]
    pos = {c: k for k, c in enumerate(retained)}
    rows, cc, vals = [], [], []
    for i, c in enumerate(cols):
        if c.kind == "prep":
            j = index[EigenvalueIndex.meas(c.qubit, "Z")]
            rows.append(i)
            cc.append(pos[j])
            vals.append(design.gauge.get(c.qubit, 1.0))
        else:
            rows.append(i)
            cc.append(pos[i])
            vals.append(1.0)
    t = sp.csr_matrix((vals, (rows, cc)), shape=(len(cols), len(retained)))
    return t, retained


def reduced_matrix(design: ExperimentDesign, dm: DesignMatrix) -> sp.csr_matrix:
    t, _ = gauge_map(design)
    return (dm.matrix.astype(float) @ t).tocsr()


def check_design_rank(design: ExperimentDesign, dm: DesignMatrix) -> None:
    """Raise ``RankDeficientDesign`` if the gauge-fixed matrix is rank deficient."""
    a = reduced_matrix(design, dm)
    _, retained = gauge_map(design)
    gram = (a.T @ a).toarray()
    evals, evecs = np.linalg.eigh(gram)
    tol = max(gram.shape) * np.finfo(float).eps * max(evals.max(), 1.0) * 1e3
    null = evecs[:, evals <= tol]
    if null.shape[1]:
        deficient = []
        for v in null.T:
            idx = np.flatnonzero(np.abs(v) > 1e-6)
            deficient.append([str(design.columns[retained[i]]) for i in idx])
        raise RankDeficientDesign(
            f"design matrix rank deficient by {null.shape[1]} after gauge fixing", deficient
        )


def true_parameters(design: ExperimentDesign, noise: NoiseInstance) -> np.ndarray:
    """Column values under ``noise``: gate eigenvalues and SPAM eigenvalues."""
    resets, meas = _spam_reference(noise, design.circuit)
    eig_cache: dict[GateKey, dict[str, float]] = {}
    values = np.empty(len(design.columns))
    gates = {g.key: g for g in design.gates}
    for i, c in enumerate(design.columns):
        if c.kind == "gate":
            if c.gate not in eig_cache:
                g = gates[c.gate]
                ev = channel_to_eigenvalues(noise.channel(g))
                eig_cache[c.gate] = dict(zip(pauli_labels(g.arity)[1:], ev.values))
            values[i] = eig_cache[c.gate][c.label]
        elif c.kind == "prep":
            values[i] = 1 - 2 * resets.get(c.qubit, 0.0)
        else:
            values[i] = 1 - 2 * meas.get(c.qubit, 0.0)
    return values


def gauge_fixed_parameters(design: ExperimentDesign, values: np.ndarray) -> np.ndarray:
    """Move ``values`` along the SPAM gauge so that it satisfies the design gauge.

    The result predicts identical circuit eigenvalues for every experiment.
    """
    logs = np.log(values)
    out = logs.copy()
    index = design.column_index
    gates = {g.key: g for g in design.gates}
    shifts = {}
    for q, rho in design.gauge.items():
        ip = index.get(EigenvalueIndex.prep(q))
        iz = index.get(EigenvalueIndex.meas(q, "Z"))
        if ip is None or iz is None:
            continue
        # (lp + c) = rho * (lz - c)  =>  c = (rho * lz - lp) / (1 + rho)
        c = (rho * logs[iz] - logs[ip]) / (1 + rho)
        shifts[q] = c
        out[ip] += c
        for b in BASES:
            out[index[EigenvalueIndex.meas(q, b)]] -= c
    for i, col in enumerate(design.columns):
        if col.kind != "gate":
            continue
        g = gates[col.gate]
        _, image = local_table(g.kind)[col.label]
        for k, q in enumerate(g.targets):
            if q in shifts:
                out[i] += shifts[q] * ((image[k] != "I") - (col.label[k] != "I"))
    return np.exp(out)


# Orbit marginalisation and figures of merit.


@dataclass(frozen=True)
class OrbitMap:
    matrix: sp.csr_matrix  # (n_orbits, n_columns_in)
    orbits: tuple[tuple[GateKey, tuple[str, ...]], ...]


def orbit_marginalizer(columns, gates: list[Gate] | None = None) -> OrbitMap:
    """Average log-eigenvalues over each gate orbit; SPAM columns are dropped."""
    columns = list(columns)
    index = {c: i for i, c in enumerate(columns)}
    if gates is None:
        keys = []
        for c in columns:
            if c.kind == "gate" and c.gate not in keys:
                keys.append(c.gate)
        gates = [Gate(*k) for k in keys]
    rows, cols, vals, orbits = [], [], [], []
    for g in gates:
        for orbit in gate_orbits(g).orbits:
            r = len(orbits)
            orbits.append((g.key, orbit))
            for lbl in orbit:
                rows.append(r)
                cols.append(index[EigenvalueIndex.for_gate(g, lbl)])
                vals.append(1 / len(orbit))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(orbits), len(columns)))
    return OrbitMap(m, tuple(orbits))


@dataclass(frozen=True)
class FigureOfMerit:
    F: float
    F_R: float

    @property
    def product(self) -> float:
        return self.F * self.F_R


def predicted_row_values(design: ExperimentDesign, dm: DesignMatrix, noise: NoiseInstance) -> np.ndarray:
    return np.exp(dm.matrix @ np.log(true_parameters(design, noise)))


def _group_structure(design: ExperimentDesign):
    """Rows per group, group per batch."""
    groups: dict[int, list[int]] = {}
    for r, e in enumerate(design.experiments):
        groups.setdefault(e.group, []).append(r)
    return groups


def model_row_covariance(design: ExperimentDesign, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Single-shot covariance blocks of the row log-estimators.

    Rows sharing a group are products of the same single-qubit outcomes, so
    ``Cov(x_S, x_T) = Lambda_{S xor T} - Lambda_S Lambda_T`` where the
    symmetric-difference expectation is another row's value (or 0 when that
    product is not a stabilizer). Divided by ``Lambda_S Lambda_T`` for logs.
    """
    blocks = []
    for rows in _group_structure(design).values():
        rows = np.array(rows)
        masks = [_row_mask(design.experiments[r]) for r in rows]
        lookup = {m: values[r] for m, r in zip(masks, rows)}
        k = rows.size
        cov = np.empty((k, k))
        for a in range(k):
            for b in range(k):
                joint = lookup.get(masks[a] ^ masks[b], 0.0) if masks[a] != masks[b] else 1.0
                cov[a, b] = joint - values[rows[a]] * values[rows[b]]
        scale = values[rows]
        blocks.append((rows, cov / np.outer(scale, scale)))
    return blocks


def _row_mask(e: ExperimentCircuit) -> int:
    mask = 0
    for i, ch in enumerate(e.measured):
        if ch != "I":
            mask |= 1 << i
    return mask


def figures_of_merit(
    design: ExperimentDesign,
    dm: DesignMatrix,
    reference_noise: NoiseInstance,
    total_shots: float = 1e6,
) -> FigureOfMerit:
    """Root-mean-square standard errors of log-eigenvalue estimates.

    ``F`` covers every retained column; ``F_R`` covers gate-orbit averages.
    """
    fom, _ = _fom_and_grad(design, dm, reference_noise, design.shot_weights, total_shots, grad=False)
    return fom


def _fom_and_grad(design, dm, reference_noise, weights, total_shots, grad=True, cache=None):
    if cache is None:
        cache = _fom_cache(design, dm, reference_noise)
    a_red, binv, row_batch, m_red = cache
    row_w = weights[row_batch] * total_shots
    info = (a_red.T @ (sp.diags(row_w) @ binv) @ a_red).toarray()
    try:
        chol = sla.cho_factor(info)
    except np.linalg.LinAlgError:
        raise RankDeficientDesign("information matrix singular for these shot weights", []) from None
    sigma = sla.cho_solve(chol, np.eye(info.shape[0]))
    p = sigma.shape[0]
    sigma_r = m_red @ sigma @ m_red.T
    tr, tr_r = np.trace(sigma), np.trace(sigma_r)
    fom = FigureOfMerit(float(np.sqrt(tr / p)), float(np.sqrt(tr_r / m_red.shape[0])))
    if not grad:
        return fom, None
    # d tr(S) / d w_b = -N tr(Omega_b^-1 A_b S S A_b^T), likewise for M S M^T.
    a_s = np.asarray(a_red @ sigma)
    a_sm = a_s @ m_red.T
    n_b = len(design.batches)
    g1 = np.bincount(row_batch, np.sum(np.asarray(binv @ a_s) * a_s, axis=1), n_b)
    g2 = np.bincount(row_batch, np.sum(np.asarray(binv @ a_sm) * a_sm, axis=1), n_b)
    g = -total_shots * (0.5 * g1 / tr + 0.5 * g2 / tr_r)
    return fom, g


def _fom_cache(design, dm, reference_noise):
    values = predicted_row_values(design, dm, reference_noise)
    values = np.clip(values, 1e-9, None)
    a_red = reduced_matrix(design, dm)
    n_rows = a_red.shape[0]
    rows_i, cols_i, vals = [], [], []
    for rows, cov in model_row_covariance(design, values):
        inv = np.linalg.inv(cov + 1e-12 * np.eye(rows.size))
        rr, cc = np.meshgrid(rows, rows, indexing="ij")
        rows_i.append(rr.ravel())
        cols_i.append(cc.ravel())
        vals.append(inv.ravel())
    binv = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))), shape=(n_rows, n_rows)
    )
    row_batch = np.array([e.batch for e in design.experiments], dtype=np.intp)
    _, retained = gauge_map(design)
    orbit = orbit_marginalizer(design.columns, design.gates)
    m_red = orbit.matrix.toarray()[:, retained]
    return a_red, binv, row_batch, m_red


def optimize_shot_weights(
    design: ExperimentDesign,
    dm: DesignMatrix,
    reference_noise: NoiseInstance,
    iterations: int = 30,
    step: float = 1.0,
    min_fraction: float = 0.1,
) -> np.ndarray:
    """Reduce ``F * F_R`` over batch weights by exponentiated-gradient steps.

    Starts from the design's current weights; a step is accepted only if it
    lowers the objective (otherwise the step size is halved), so the result
    is never worse than the start. Every batch keeps at least
    ``min_fraction / n_batches`` of the shots so that small budgets still
    reach every batch.
    """
    weights = design.shot_weights.copy()
    if weights.size <= 1:
        return weights
    floor = min_fraction / weights.size
    cache = _fom_cache(design, dm, reference_noise)
    fom, grad = _fom_and_grad(design, dm, reference_noise, weights, 1.0, cache=cache)
    best = fom.product
    eta = step
    for _ in range(iterations):
        # Relative gradient keeps the step scale-free.
        rel = grad * weights
        direction = grad - rel.sum()
        scale = np.max(np.abs(direction)) or 1.0
        accepted = False
        while eta > 1e-6:
            trial = weights * np.exp(-eta * direction / scale)
            trial /= trial.sum()
            # Mix with the uniform floor so every batch keeps at least ``floor``.
            trial = floor + (1 - floor * trial.size) * trial
            try:
                f_trial, g_trial = _fom_and_grad(design, dm, reference_noise, trial, 1.0, cache=cache)
            except RankDeficientDesign:
                eta /= 2
                continue
            if f_trial.product < best:
                weights, grad, best = trial, g_trial, f_trial.product
                eta = min(eta * 1.5, 8.0)
                accepted = True
                break
            eta /= 2
        if not accepted:
            break
    if not np.all(np.isfinite(weights)):
        warnings.warn("shot-weight optimisation produced non-finite weights; keeping the start")
        return design.shot_weights.copy()
    return weights
