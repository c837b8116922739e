"""Clifford gates, layers and circuits, with signed Pauli conjugation.

A circuit is a sequence of layers; a layer holds gates on disjoint qubits and
has a name (its *context*). Noise is assigned per gate identity
``(kind, targets, layer_context)``, so the same layer appearing twice in a
circuit shares its noise.

Text format (one layer per line)::

    QUBITS 3
    prep: ResetZ 0; ResetZ 1; ResetZ 2
    entangle: H 0; CZ 1,2

Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Iterator

from .pauli import PauliString, pauli_labels

ONE_QUBIT_UNITARY = ("H", "S", "X", "Z", "Idle", "MeasureIdle")
TWO_QUBIT_UNITARY = ("CX", "CZ")
NON_UNITARY = ("MeasureZ", "ResetZ")
GATE_KINDS = ONE_QUBIT_UNITARY + TWO_QUBIT_UNITARY + NON_UNITARY
# Gates whose noise is a Pauli channel on their targets.
CHANNEL_KINDS = ONE_QUBIT_UNITARY + TWO_QUBIT_UNITARY

GateKey = tuple[str, tuple[int, ...], str]


@dataclass(frozen=True, order=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    layer_context: str = ""

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unsupported gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        arity = 2 if self.kind in TWO_QUBIT_UNITARY else 1
        if len(self.targets) != arity:
            raise ValueError(f"{self.kind} takes {arity} target(s), got {self.targets}")
        if arity == 2 and self.targets[0] == self.targets[1]:
            raise ValueError(f"{self.kind} targets must be distinct")
        if any(t < 0 for t in self.targets):
            raise ValueError("negative qubit index")

    @property
    def key(self) -> GateKey:
        return (self.kind, self.targets, self.layer_context)

    @property
    def arity(self) -> int:
        return len(self.targets)

    @property
    def is_unitary(self) -> bool:
        return self.kind not in NON_UNITARY

    @property
    def has_channel(self) -> bool:
        return self.kind in CHANNEL_KINDS

    def __str__(self) -> str:
        return f"{self.kind} {','.join(map(str, self.targets))}"


@dataclass(frozen=True)
class Layer:
    name: str
    gates: tuple[Gate, ...]

    def __post_init__(self):
        gates = tuple(
            g if g.layer_context == self.name else Gate(g.kind, g.targets, self.name)
            for g in self.gates
        )
        seen: set[int] = set()
        for g in gates:
            if seen.intersection(g.targets):
                raise ValueError(f"layer {self.name!r}: gates overlap on qubits {g.targets}")
            seen.update(g.targets)
        object.__setattr__(self, "gates", gates)

    @property
    def qubits(self) -> frozenset[int]:
        return frozenset(q for g in self.gates for q in g.targets)

    def gate_on(self, qubit: int) -> Gate | None:
        for g in self.gates:
            if qubit in g.targets:
                return g
        return None


@dataclass(frozen=True)
class MeasurementEvent:
    index: int
    layer: int
    qubit: int
    gate: Gate


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for layer in self.layers:
            for g in layer.gates:
                if max(g.targets) >= self.n_qubits:
                    raise ValueError(f"gate {g} exceeds n_qubits={self.n_qubits}")

    @cached_property
    def measurements(self) -> tuple[MeasurementEvent, ...]:
        """Measurement events in time order (layer order, then gate order)."""
        events = []
        for li, layer in enumerate(self.layers):
            for g in layer.gates:
                if g.kind == "MeasureZ":
                    events.append(MeasurementEvent(len(events), li, g.targets[0], g))
        return tuple(events)

    @property
    def n_measurements(self) -> int:
        return len(self.measurements)

    def gates(self) -> Iterator[Gate]:
        for layer in self.layers:
            yield from layer.gates

    def unique_gates(self) -> list[Gate]:
        """Distinct gate identities in order of first appearance."""
        seen: dict[GateKey, Gate] = {}
        for g in self.gates():
            seen.setdefault(g.key, g)
        return list(seen.values())

    def unique_layers(self) -> list[Layer]:
        seen: dict[str, Layer] = {}
        for layer in self.layers:
            if layer.name in seen and seen[layer.name] != layer:
                raise ValueError(f"layer name {layer.name!r} reused for different gates")
            seen.setdefault(layer.name, layer)
        return list(seen.values())

    def __add__(self, other: Circuit) -> Circuit:
        return Circuit(max(self.n_qubits, other.n_qubits), self.layers + other.layers)

    def to_text(self) -> str:
        lines = [f"QUBITS {self.n_qubits}"]
        for layer in self.layers:
            lines.append(f"{layer.name}: " + "; ".join(str(g) for g in layer.gates))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Circuit:
        n_qubits = None
        layers = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("QUBITS"):
                n_qubits = int(line.split()[1])
                continue
            name, _, body = line.partition(":")
            gates = []
            for item in body.split(";"):
                item = item.strip()
                if not item:
                    continue
                kind, _, targets = item.partition(" ")
                gates.append(Gate(kind, tuple(int(t) for t in targets.split(",")), name.strip()))
            layers.append(Layer(name.strip(), tuple(gates)))
        if n_qubits is None:
            n_qubits = 1 + max((q for layer in layers for q in layer.qubits), default=-1)
        return cls(n_qubits, tuple(layers))


def make_layer(name: str, gates: Iterable[tuple[str, Iterable[int]] | Gate]) -> Layer:
    built = []
    for g in gates:
        if isinstance(g, Gate):
            built.append(Gate(g.kind, g.targets, name))
        else:
            kind, targets = g
            built.append(Gate(kind, tuple(targets), name))
    return Layer(name, tuple(built))


# Signed conjugation, Aaronson-Gottesman update rules on (x, z, sign).


def _apply_rules(kind: str, x: list[int], z: list[int], targets: tuple[int, ...]) -> int:
    """Conjugate in place; return 1 if the sign flips."""
    flip = 0
    if kind in ("Idle", "MeasureIdle"):
        return 0
    if kind == "H":
        (q,) = targets
        flip = x[q] & z[q]
        x[q], z[q] = z[q], x[q]
    elif kind == "S":
        (q,) = targets
        flip = x[q] & z[q]
        z[q] ^= x[q]
    elif kind == "X":
        flip = z[targets[0]]
    elif kind == "Z":
        flip = x[targets[0]]
    elif kind == "CX":
        a, b = targets
        flip = x[a] & z[b] & (x[b] ^ z[a] ^ 1)
        x[b] ^= x[a]
        z[a] ^= z[b]
    elif kind == "CZ":
        # CZ = (I x H) CX (I x H)
        a, b = targets
        flip ^= _apply_rules("H", x, z, (b,))
        flip ^= _apply_rules("CX", x, z, (a, b))
        flip ^= _apply_rules("H", x, z, (b,))
    else:
        raise ValueError(f"cannot conjugate by non-unitary gate {kind!r}")
    return flip


def conjugate(gate: Gate, pauli: PauliString) -> PauliString:
    """Return the signed Pauli ``G P G^dagger``."""
    if not gate.is_unitary:
        raise ValueError(f"cannot conjugate by non-unitary gate {gate.kind!r}")
    if max(gate.targets) >= pauli.n:
        raise ValueError("gate acts outside the Pauli's qubits")
    x, z = list(pauli.x_bits), list(pauli.z_bits)
    flip = _apply_rules(gate.kind, x, z, gate.targets)
    return PauliString(tuple(x), tuple(z), -pauli.sign if flip else pauli.sign)


@lru_cache(maxsize=None)
def local_table(kind: str) -> dict[str, tuple[int, str]]:
    """Map each local label on the gate's support to ``(sign, image label)``."""
    arity = 2 if kind in TWO_QUBIT_UNITARY else 1
    gate = Gate(kind, tuple(range(arity)))
    table = {}
    for label in pauli_labels(arity):
        image = conjugate(gate, PauliString.from_label(label))
        table[label] = (image.sign, image.label)
    return table


def apply_layer(layer: Layer, pauli: PauliString) -> PauliString:
    """Heisenberg-forward propagation of ``pauli`` through one layer.

    Measurement and reset leave an operator that is trivial on their qubit
    untouched; a Z component survives a Z measurement. Anything else is
    destroyed and raises ``ValueError``.
    """
    for g in layer.gates:
        if g.is_unitary:
            pauli = conjugate(g, pauli)
            continue
        (q,) = g.targets
        local = pauli.restrict((q,))
        if local == "I" or (g.kind == "MeasureZ" and local == "Z"):
            continue
        raise ValueError(f"Pauli {pauli} is not preserved by {g.kind} on qubit {q}")
    return pauli


def circuit_propagate(circuit: Circuit, pauli: PauliString) -> PauliString:
    if pauli.n != circuit.n_qubits:
        raise ValueError("Pauli and circuit qubit counts differ")
    for layer in circuit.layers:
        pauli = apply_layer(layer, pauli)
    return pauli


@dataclass(frozen=True)
class GateOrbitSet:
    """Orbits of the gate's non-identity local Paulis under conjugation.

    Each orbit lists labels in the order the gate visits them; signs are
    ignored.
    """

    gate: Gate
    orbits: tuple[tuple[str, ...], ...]

    def orbit_of(self, label: str) -> tuple[str, ...]:
        for orbit in self.orbits:
            if label in orbit:
                return orbit
        raise KeyError(label)


def gate_orbits(gate: Gate) -> GateOrbitSet:
    if not gate.is_unitary:
        raise ValueError(f"{gate.kind} has no orbits (non-unitary)")
    table = local_table(gate.kind)
    remaining = [lbl for lbl in pauli_labels(gate.arity)[1:]]
    orbits = []
    while remaining:
        start = remaining[0]
        orbit = [start]
        current = table[start][1]
        while current != start:
            orbit.append(current)
            current = table[current][1]
        orbits.append(tuple(orbit))
        remaining = [lbl for lbl in remaining if lbl not in orbit]
    return GateOrbitSet(gate, tuple(orbits))
