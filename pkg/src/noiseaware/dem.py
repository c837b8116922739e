"""Detector error models and their fault signatures.

Signatures depend only on the circuit and detectors, never on the noise, so
they are computed once (by batch frame propagation of X and Z basis faults)
and reused for every prior built on the same circuit.

DEM text format, one mechanism per line::

    # comment
    0.00123 3 17 L

The first token is the probability, then detector ids, then an optional
``L`` when the mechanism flips the logical observable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .circuit import Circuit, Gate
from .frame import FaultBatch, propagate_faults
from .noise import MissingNoiseError, NoiseInstance, key_to_str
from .pauli import pauli_labels
from .surface import DetectorSet

# Per-label (x, z) bits on each qubit, for 1- and 2-qubit supports.
_LABEL_BITS = {
    1: np.array([[[0, 0]], [[1, 0]], [[1, 1]], [[0, 1]]], dtype=bool),
}
_LABEL_BITS[2] = np.array(
    [[_LABEL_BITS[1][i, 0], _LABEL_BITS[1][j, 0]] for i in range(4) for j in range(4)], dtype=bool
)


@dataclass(frozen=True)
class ErrorMechanism:
    probability: float
    detectors: tuple[int, ...]
    logical: bool
    provenance: tuple[tuple[str, str], ...] = ()  # (gate key, Pauli label) contributors


@dataclass(frozen=True)
class _Source:
    """One noise parameter: a (gate, Pauli) channel entry or a flip."""

    gate: Gate
    label: str  # Pauli label on the gate's targets, or "flip"


class FaultSignatures:
    """Detector/logical signature of every elementary fault of a circuit.

    Elementary faults are each non-identity Pauli of each channel gate
    (applied before the gate), each measurement flip and each reset flip
    (an X after the reset). Faults with equal signatures share a group.
    """

    def __init__(self, circuit: Circuit, detectors: DetectorSet):
        self.circuit = circuit
        self.detectors = detectors
        self.n_detectors = detectors.n_detectors

        sources: list[_Source] = []
        # Elementary fault components: (layer position, qubit, xbit, zbit, fault index).
        comp_layer, comp_qubit, comp_x, comp_z, comp_fault = [], [], [], [], []
        for li, layer in enumerate(circuit.layers):
            for g in layer.gates:
                if g.has_channel:
                    bits = _LABEL_BITS[g.arity]
                    for a, label in enumerate(pauli_labels(g.arity)):
                        if a == 0:
                            continue
                        for k, q in enumerate(g.targets):
                            if bits[a, k].any():
                                comp_layer.append(li)
                                comp_qubit.append(q)
                                comp_x.append(bits[a, k, 0])
                                comp_z.append(bits[a, k, 1])
                                comp_fault.append(len(sources))
                        sources.append(_Source(g, label))
                elif g.kind == "MeasureZ":
                    comp_layer.append(li)
                    comp_qubit.append(g.targets[0])
                    comp_x.append(True)
                    comp_z.append(False)
                    comp_fault.append(len(sources))
                    sources.append(_Source(g, "flip"))
                elif g.kind == "ResetZ":
                    comp_layer.append(li + 1)
                    comp_qubit.append(g.targets[0])
                    comp_x.append(True)
                    comp_z.append(False)
                    comp_fault.append(len(sources))
                    sources.append(_Source(g, "flip"))
        self.sources = sources
        batch = FaultBatch(
            len(sources),
            np.array(comp_layer, dtype=np.intp),
            np.array(comp_qubit, dtype=np.intp),
            np.array(comp_fault, dtype=np.intp),
            np.array(comp_x, dtype=bool),
            np.array(comp_z, dtype=bool),
        )
        flips = propagate_faults(circuit, batch)  # (n_meas, n_faults)
        det_matrix = self.detector_matrix(detectors, circuit.n_measurements)
        sig = (det_matrix @ flips.astype(np.int32)) % 2  # (n_det + 1, n_faults)
        sig = sig.astype(bool).T
        packed = np.packbits(sig, axis=1)
        uniq, inverse = np.unique(packed, axis=0, return_inverse=True)
        self.group = inverse.reshape(-1)
        unpacked = np.unpackbits(uniq, axis=1, count=self.n_detectors + 1).astype(bool)
        self.group_detectors = unpacked[:, : self.n_detectors]
        self.group_logical = unpacked[:, self.n_detectors]
        self.n_groups = uniq.shape[0]

    @staticmethod
    def detector_matrix(detectors: DetectorSet, n_measurements: int) -> sp.csr_matrix:
        """Sparse (n_det + 1, n_meas) parity matrix; the last row is the observable."""
        rows, cols = [], []
        for k, members in enumerate(detectors.detectors):
            rows.extend([k] * len(members))
            cols.extend(members)
        rows.extend([detectors.n_detectors] * len(detectors.observable))
        cols.extend(detectors.observable)
        data = np.ones(len(rows), dtype=np.int32)
        return sp.csr_matrix((data, (rows, cols)), shape=(detectors.n_detectors + 1, n_measurements))

    def source_probabilities(self, noise: NoiseInstance) -> np.ndarray:
        """Probability of every elementary fault under ``noise``."""
        probs = np.empty(len(self.sources))
        cache: dict = {}
        for i, src in enumerate(self.sources):
            key = src.gate.key
            if src.label == "flip":
                probs[i] = noise.flip(src.gate)
                continue
            if key not in cache:
                cache[key] = noise.channel(src.gate).probs
            probs[i] = cache[key][_label_index(src.label)]
        return probs

    @cached_property
    def group_nontrivial(self) -> np.ndarray:
        return self.group_detectors.any(axis=1) | self.group_logical


def _label_index(label: str) -> int:
    idx = 0
    for ch in label:
        idx = 4 * idx + "IXYZ".index(ch)
    return idx


@dataclass(frozen=True)
class DetectorErrorModel:
    """Merged error mechanisms as arrays (one row per distinct signature)."""

    n_detectors: int
    probabilities: np.ndarray
    detectors: tuple[tuple[int, ...], ...]
    logical: np.ndarray
    provenance: tuple[tuple[tuple[str, str], ...], ...] = ()

    def __len__(self) -> int:
        return self.probabilities.size

    @property
    def mechanisms(self) -> list[ErrorMechanism]:
        prov = self.provenance or ((),) * len(self)
        return [
            ErrorMechanism(float(p), d, bool(l), pv)
            for p, d, l, pv in zip(self.probabilities, self.detectors, self.logical, prov)
        ]

    def to_text(self) -> str:
        lines = [f"# detectors {self.n_detectors}"]
        for p, dets, log in zip(self.probabilities, self.detectors, self.logical):
            tokens = [repr(float(p))] + [str(d) for d in dets] + (["L"] if log else [])
            lines.append(" ".join(tokens))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> DetectorErrorModel:
        n_det = 0
        probs, dets, logs = [], [], []
        for raw in text.splitlines():
            line = raw.strip()
            if line.startswith("# detectors"):
                n_det = int(line.split()[2])
                continue
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            probs.append(float(tokens[0]))
            logical = tokens[-1] == "L"
            ids = tokens[1:-1] if logical else tokens[1:]
            dets.append(tuple(int(t) for t in ids))
            logs.append(logical)
        n_det = max([n_det] + [max(d) + 1 for d in dets if d])
        return cls(n_det, np.array(probs), tuple(dets), np.array(logs, dtype=bool))


def xor_merge(p: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Probability that an odd number of independent faults fires, per group."""
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(1 - 2 * p))
    total = np.bincount(groups, weights=logs, minlength=n_groups)
    # A fault with p == 0.5 makes the whole group p == 0.5.
    return (1 - np.exp(total)) / 2


def build_dem(
    signatures: FaultSignatures, noise: NoiseInstance, provenance: bool = False
) -> DetectorErrorModel:
    """Merge elementary faults with equal signatures into error mechanisms.

    Raises ``MissingNoiseError`` when ``noise`` lacks an entry for a gate.
    """
    p = signatures.source_probabilities(noise)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("fault probabilities must lie in [0, 1]")
    merged = xor_merge(p, signatures.group, signatures.n_groups)
    keep = np.flatnonzero((merged > 0) & signatures.group_nontrivial)
    dets = tuple(tuple(int(i) for i in np.flatnonzero(signatures.group_detectors[g])) for g in keep)
    prov: tuple = ()
    if provenance:
        members: dict[int, list[tuple[str, str]]] = {int(g): [] for g in keep}
        for i, g in enumerate(signatures.group):
            if int(g) in members and p[i] > 0:
                src = signatures.sources[i]
                members[int(g)].append((key_to_str(src.gate.key), src.label))
        prov = tuple(tuple(members[int(g)]) for g in keep)
    return DetectorErrorModel(
        signatures.n_detectors, merged[keep], dets, signatures.group_logical[keep].copy(), prov
    )


__all__ = [
    "DetectorErrorModel",
    "ErrorMechanism",
    "FaultSignatures",
    "MissingNoiseError",
    "build_dem",
    "xor_merge",
]
