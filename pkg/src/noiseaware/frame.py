"""Vectorised Pauli-frame propagation.

Frames are stored as two boolean arrays ``x[q, k]`` and ``z[q, k]``; column
``k`` is one shot (sampling) or one injected fault (signature tables). Signs
are irrelevant for frames: a measurement flips exactly when the frame has an
X component on the measured qubit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, Layer, PauliString

_ONE_Q_BITS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=bool)  # I X Y Z
_TWO_Q_BITS = np.array(
    [np.concatenate([_ONE_Q_BITS[i], _ONE_Q_BITS[j]]) for i in range(4) for j in range(4)],
    dtype=bool,
)  # columns: x_a, z_a, x_b, z_b


@dataclass(frozen=True)
class _CompiledLayer:
    h: np.ndarray
    s: np.ndarray
    cx: np.ndarray  # (k, 2)
    cz: np.ndarray  # (k, 2)
    measure: np.ndarray
    measure_index: np.ndarray
    reset: np.ndarray


def _compile(circuit: Circuit) -> list[_CompiledLayer]:
    compiled = []
    meas_counter = 0
    for layer in circuit.layers:
        groups: dict[str, list] = {"H": [], "S": [], "CX": [], "CZ": [], "MeasureZ": [], "ResetZ": []}
        for g in layer.gates:
            if g.kind in groups:
                groups[g.kind].append(g.targets if g.arity == 2 else g.targets[0])
        n_meas = len(groups["MeasureZ"])
        compiled.append(
            _CompiledLayer(
                h=np.array(groups["H"], dtype=np.intp),
                s=np.array(groups["S"], dtype=np.intp),
                cx=np.array(groups["CX"], dtype=np.intp).reshape(-1, 2),
                cz=np.array(groups["CZ"], dtype=np.intp).reshape(-1, 2),
                measure=np.array(groups["MeasureZ"], dtype=np.intp),
                measure_index=np.arange(meas_counter, meas_counter + n_meas),
                reset=np.array(groups["ResetZ"], dtype=np.intp),
            )
        )
        meas_counter += n_meas
    return compiled


class FrameSimulator:
    """Batch of Pauli frames pushed through Clifford layers."""

    def __init__(self, n_qubits: int, n_frames: int):
        self.n_qubits = n_qubits
        self.n_frames = n_frames
        self.x = np.zeros((n_qubits, n_frames), dtype=bool)
        self.z = np.zeros((n_qubits, n_frames), dtype=bool)

    def apply_gate(self, kind: str, targets: tuple[int, ...]) -> None:
        x, z = self.x, self.z
        if kind == "H":
            (q,) = targets
            x[q], z[q] = z[q].copy(), x[q].copy()
        elif kind == "S":
            (q,) = targets
            z[q] ^= x[q]
        elif kind == "CX":
            a, b = targets
            x[b] ^= x[a]
            z[a] ^= z[b]
        elif kind == "CZ":
            a, b = targets
            z[a] ^= x[b]
            z[b] ^= x[a]
        elif kind == "ResetZ":
            (q,) = targets
            x[q] = False
            z[q] = False
        elif kind in ("X", "Z", "Idle", "MeasureIdle", "MeasureZ"):
            pass
        else:
            raise ValueError(f"unsupported gate kind {kind!r}")

    def apply_layer(self, layer: Layer) -> None:
        for g in layer.gates:
            self.apply_gate(g.kind, g.targets)

    def _apply_compiled(self, cl: _CompiledLayer, records: np.ndarray | None) -> None:
        x, z = self.x, self.z
        if cl.h.size:
            x[cl.h], z[cl.h] = z[cl.h], x[cl.h]
        if cl.s.size:
            z[cl.s] ^= x[cl.s]
        if cl.cx.size:
            a, b = cl.cx[:, 0], cl.cx[:, 1]
            x[b] ^= x[a]
            z[a] ^= z[b]
        if cl.cz.size:
            a, b = cl.cz[:, 0], cl.cz[:, 1]
            za = z[a] ^ x[b]
            z[b] ^= x[a]
            z[a] = za
        if cl.measure.size and records is not None:
            records[cl.measure_index] = x[cl.measure]
        if cl.reset.size:
            x[cl.reset] = False
            z[cl.reset] = False

    def inject(self, qubits, columns, xbits, zbits) -> None:
        """XOR Pauli components into frames; ``(qubit, column)`` pairs must be unique."""
        self.x[qubits, columns] ^= xbits
        self.z[qubits, columns] ^= zbits


class NoisePlan:
    """Per-layer arrays for sampling a noise instance on a circuit."""

    def __init__(self, circuit: Circuit, noise):
        self.layers = []
        for layer in circuit.layers:
            one_q, two_q, meas, reset = [], [], [], []
            for g in layer.gates:
                if g.has_channel:
                    ch = noise.channel(g)
                    if ch.total_error <= 0:
                        continue
                    (one_q if g.arity == 1 else two_q).append((g.targets, ch))
                elif g.kind == "MeasureZ":
                    f = noise.flip(g)
                    if f > 0:
                        meas.append((g.targets[0], f))
                elif g.kind == "ResetZ":
                    f = noise.flip(g)
                    if f > 0:
                        reset.append((g.targets[0], f))
            self.layers.append(
                (
                    _ChannelGroup.build(one_q, 1),
                    _ChannelGroup.build(two_q, 2),
                    _FlipGroup.build(meas),
                    _FlipGroup.build(reset),
                )
            )


@dataclass
class _ChannelGroup:
    targets: np.ndarray  # (g, arity)
    total: np.ndarray  # (g,)
    cum: np.ndarray  # (g, 4**arity - 1) conditional CDF over non-identity Paulis
    arity: int

    @classmethod
    def build(cls, items, arity):
        if not items:
            return None
        targets = np.array([t for t, _ in items], dtype=np.intp).reshape(-1, arity)
        errors = np.array([c.errors for _, c in items])
        total = errors.sum(axis=1)
        cum = np.cumsum(errors / total[:, None], axis=1)
        cum[:, -1] = 1.0
        return cls(targets, total, cum, arity)

    def sample(self, rng: np.random.Generator, sim: FrameSimulator) -> None:
        shots = sim.n_frames
        u = rng.random((self.total.size, shots))
        gi, si = np.nonzero(u < self.total[:, None])
        if gi.size == 0:
            return
        v = u[gi, si] / self.total[gi]
        which = 1 + (v[:, None] >= self.cum[gi]).sum(axis=1)
        which = np.minimum(which, self.cum.shape[1])
        if self.arity == 1:
            bits = _ONE_Q_BITS[which]
            sim.inject(self.targets[gi, 0], si, bits[:, 0], bits[:, 1])
        else:
            bits = _TWO_Q_BITS[which]
            sim.inject(self.targets[gi, 0], si, bits[:, 0], bits[:, 1])
            sim.inject(self.targets[gi, 1], si, bits[:, 2], bits[:, 3])


@dataclass
class _FlipGroup:
    qubits: np.ndarray
    probs: np.ndarray

    @classmethod
    def build(cls, items):
        if not items:
            return None
        return cls(np.array([q for q, _ in items], dtype=np.intp), np.array([p for _, p in items]))

    def sample(self, rng: np.random.Generator, sim: FrameSimulator) -> None:
        flips = rng.random((self.qubits.size, sim.n_frames)) < self.probs[:, None]
        sim.x[self.qubits] ^= flips


def sample_measurement_flips(circuit: Circuit, noise, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Sample which measurement outcomes flip relative to the noiseless run.

    Returns a ``(n_measurements, shots)`` boolean array.
    """
    plan = NoisePlan(circuit, noise)
    sim = FrameSimulator(circuit.n_qubits, shots)
    records = np.zeros((circuit.n_measurements, shots), dtype=bool)
    for cl, (one_q, two_q, meas, reset) in zip(_compile(circuit), plan.layers):
        for group in (one_q, two_q, meas):
            if group is not None:
                group.sample(rng, sim)
        sim._apply_compiled(cl, records)
        if reset is not None:
            reset.sample(rng, sim)
    return records


@dataclass(frozen=True)
class FaultBatch:
    """Faults to inject, one column each, as flat component arrays.

    Component ``i`` XORs ``(xbit[i], zbit[i])`` onto ``qubit[i]`` of column
    ``column[i]`` just before layer ``layer[i]`` (``layer == len(layers)``
    means after the last layer).
    """

    n_columns: int
    layer: np.ndarray
    qubit: np.ndarray
    column: np.ndarray
    xbit: np.ndarray
    zbit: np.ndarray


def propagate_faults(circuit: Circuit, faults: FaultBatch) -> np.ndarray:
    """Measurement flips caused by each fault column, ``(n_measurements, n_columns)``."""
    n_layers = len(circuit.layers)
    if faults.layer.size and (faults.layer.min() < 0 or faults.layer.max() > n_layers):
        raise ValueError("fault layer position out of range")
    if faults.qubit.size and (faults.qubit.min() < 0 or faults.qubit.max() >= circuit.n_qubits):
        raise ValueError("fault qubit out of range")
    sim = FrameSimulator(circuit.n_qubits, faults.n_columns)
    records = np.zeros((circuit.n_measurements, faults.n_columns), dtype=bool)
    order = np.argsort(faults.layer, kind="stable")
    bounds = np.searchsorted(faults.layer[order], np.arange(n_layers + 2))
    for li, cl in enumerate(_compile(circuit)):
        sel = order[bounds[li] : bounds[li + 1]]
        if sel.size:
            # Several components can share a (qubit, column) pair; accumulate.
            np.bitwise_xor.at(sim.x, (faults.qubit[sel], faults.column[sel]), faults.xbit[sel])
            np.bitwise_xor.at(sim.z, (faults.qubit[sel], faults.column[sel]), faults.zbit[sel])
        sim._apply_compiled(cl, records)
    return records


def detector_frame_propagate(circuit: Circuit, layer: int, fault: PauliString) -> frozenset[int]:
    """Indices of measurements flipped by ``fault`` inserted before ``layer``."""
    if fault.n != circuit.n_qubits:
        raise ValueError("fault and circuit qubit counts differ")
    if not 0 <= layer <= len(circuit.layers):
        raise ValueError(f"layer position {layer} out of range")
    support = fault.support
    batch = FaultBatch(
        1,
        np.full(len(support), layer),
        np.array(support, dtype=np.intp),
        np.zeros(len(support), dtype=np.intp),
        np.array([fault.x_bits[q] for q in support], dtype=bool),
        np.array([fault.z_bits[q] for q in support], dtype=bool),
    )
    flips = propagate_faults(circuit, batch)[:, 0]
    return frozenset(int(i) for i in np.flatnonzero(flips))
