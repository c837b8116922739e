"""Rotated XZZX surface code: layout, syndrome circuits and memory experiments.

Geometry
--------
Data qubit ``(x, y)``, ``0 <= x, y < d``, has index ``y * d + x`` (y points
up). Plaquette ``(i, j)`` is centred at ``(i - 1/2, j - 1/2)`` with corners

    a = (i-1, j)   b = (i, j)
    c = (i-1, j-1) d = (i, j-1)

It is red when ``i + j`` is even and blue otherwise. Boundary half-plaquettes
are blue on the bottom/top edges and red on the left/right edges. Every
plaquette measures ``Z_a X_b X_c Z_d`` (restricted to existing corners).

Schedule per round (layer contexts in brackets)::

    [reset_anc]  ResetZ on measure qubits
    [round_1]    H on measure qubits, X on data
    [cz_1]       CZ with corner a
    [round_2]    X on measure qubits, H on data
    [cz_2]       CZ with corner b (blue) / c (red)
    [round_3]    X on measure qubits, X on data
    [cz_3]       CZ with corner c (blue) / b (red)
    [round_4]    X on measure qubits, H on data
    [cz_4]       CZ with corner d
    [round_5]    H on measure qubits, X on data
    [measure_anc] MeasureZ on measure qubits, MeasureIdle on data

Memory experiments prepare data with ``reset_data`` and a Hadamard on one
checkerboard sublattice (``h_even`` for basis Z, ``h_odd`` for basis X), and
end with the same Hadamard layer followed by ``measure_data``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuit import Circuit, Layer, make_layer
from .pauli import PauliString, symplectic_product

CORNERS = ("a", "b", "c", "d")
SLOT_ORDER = {"blue": ("a", "b", "c", "d"), "red": ("a", "c", "b", "d")}
STABILIZER_TYPE = {"a": "Z", "b": "X", "c": "X", "d": "Z"}


@dataclass(frozen=True)
class Plaquette:
    qubit: int
    i: int
    j: int
    color: str
    corners: tuple[tuple[str, int], ...]  # (corner name, data qubit) for existing corners

    @property
    def is_boundary(self) -> bool:
        return len(self.corners) == 2

    def corner(self, name: str) -> int | None:
        for c, q in self.corners:
            if c == name:
                return q
        return None

    @property
    def data_qubits(self) -> tuple[int, ...]:
        return tuple(q for _, q in self.corners)


@dataclass(frozen=True)
class SurfaceCodeLayout:
    d: int
    plaquettes: tuple[Plaquette, ...]

    @property
    def n_data(self) -> int:
        return self.d * self.d

    @property
    def n_measure(self) -> int:
        return len(self.plaquettes)

    @property
    def n_qubits(self) -> int:
        return self.n_data + self.n_measure

    @property
    def data_qubits(self) -> range:
        return range(self.n_data)

    @property
    def measure_qubits(self) -> tuple[int, ...]:
        return tuple(p.qubit for p in self.plaquettes)

    def data_coords(self, q: int) -> tuple[int, int]:
        return q % self.d, q // self.d

    def data_index(self, x: int, y: int) -> int:
        return y * self.d + x

    def parity(self, q: int) -> int:
        x, y = self.data_coords(q)
        return (x + y) % 2

    def stabilizer(self, plaquette: Plaquette) -> PauliString:
        label = ["I"] * self.n_qubits
        for name, q in plaquette.corners:
            label[q] = STABILIZER_TYPE[name]
        return PauliString.from_label("".join(label))

    def detector_color(self, basis: str) -> str:
        """Plaquette color whose stabilizers are deterministic in ``basis``."""
        return {"Z": "red", "X": "blue"}[_check_basis(basis)]

    def measured_in_x(self, basis: str) -> tuple[int, ...]:
        """Data qubits read out in the X basis (Hadamard then MeasureZ)."""
        want = 0 if _check_basis(basis) == "Z" else 1
        return tuple(q for q in self.data_qubits if self.parity(q) == want)

    def logical_support(self, basis: str) -> tuple[int, ...]:
        if _check_basis(basis) == "Z":
            return tuple(self.data_index(x, 0) for x in range(self.d))
        return tuple(self.data_index(0, y) for y in range(self.d))

    def logical(self, basis: str) -> PauliString:
        x_qubits = set(self.measured_in_x(basis))
        label = ["I"] * self.n_qubits
        for q in self.logical_support(basis):
            label[q] = "X" if q in x_qubits else "Z"
        return PauliString.from_label("".join(label))


def _check_basis(basis: str) -> str:
    if basis not in ("X", "Z"):
        raise ValueError(f"basis must be 'X' or 'Z', got {basis!r}")
    return basis


@lru_cache(maxsize=None)
def build_layout(d: int) -> SurfaceCodeLayout:
    if d < 3 or d % 2 == 0:
        raise ValueError(f"distance must be odd and >= 3, got {d}")

    def corners(i, j):
        pts = {"a": (i - 1, j), "b": (i, j), "c": (i - 1, j - 1), "d": (i, j - 1)}
        return tuple(
            (name, y * d + x) for name, (x, y) in pts.items() if 0 <= x < d and 0 <= y < d
        )

    centres = []
    for j in range(d + 1):
        for i in range(d + 1):
            color = "red" if (i + j) % 2 == 0 else "blue"
            interior = 1 <= i <= d - 1 and 1 <= j <= d - 1
            horizontal_edge = j in (0, d) and 1 <= i <= d - 1 and color == "blue"
            vertical_edge = i in (0, d) and 1 <= j <= d - 1 and color == "red"
            if interior or horizontal_edge or vertical_edge:
                centres.append((i, j, color))
    plaquettes = tuple(
        Plaquette(d * d + k, i, j, color, corners(i, j)) for k, (i, j, color) in enumerate(centres)
    )
    return SurfaceCodeLayout(d, plaquettes)


@lru_cache(maxsize=None)
def syndrome_layers(layout: SurfaceCodeLayout) -> dict[str, Layer]:
    """Every layer used by memory experiments on this layout, by context name."""
    data = list(layout.data_qubits)
    anc = list(layout.measure_qubits)
    layers = {
        "reset_data": make_layer("reset_data", [("ResetZ", [q]) for q in data]),
        "h_even": make_layer("h_even", [("H", [q]) for q in data if layout.parity(q) == 0]),
        "h_odd": make_layer("h_odd", [("H", [q]) for q in data if layout.parity(q) == 1]),
        "reset_anc": make_layer("reset_anc", [("ResetZ", [q]) for q in anc]),
        "measure_anc": make_layer(
            "measure_anc", [("MeasureZ", [q]) for q in anc] + [("MeasureIdle", [q]) for q in data]
        ),
        "measure_data": make_layer("measure_data", [("MeasureZ", [q]) for q in data]),
    }
    single = {
        1: ("H", "X"),
        2: ("X", "H"),
        3: ("X", "X"),
        4: ("X", "H"),
        5: ("H", "X"),
    }
    for k, (anc_kind, data_kind) in single.items():
        name = f"round_{k}"
        layers[name] = make_layer(name, [(anc_kind, [q]) for q in anc] + [(data_kind, [q]) for q in data])
    for slot in range(4):
        name = f"cz_{slot + 1}"
        gates = []
        for p in layout.plaquettes:
            q = p.corner(SLOT_ORDER[p.color][slot])
            if q is not None:
                gates.append(("CZ", [p.qubit, q]))
        layers[name] = make_layer(name, gates)
    return layers


ROUND_ORDER = (
    "reset_anc",
    "round_1",
    "cz_1",
    "round_2",
    "cz_2",
    "round_3",
    "cz_3",
    "round_4",
    "cz_4",
    "round_5",
    "measure_anc",
)


def build_syndrome_circuit(layout: SurfaceCodeLayout) -> Circuit:
    """One round of syndrome extraction."""
    layers = syndrome_layers(layout)
    return Circuit(layout.n_qubits, tuple(layers[name] for name in ROUND_ORDER))


def characterization_circuit(layout: SurfaceCodeLayout) -> Circuit:
    """All distinct layers of the memory experiments, each once.

    Noise instances and ACES designs are built on this circuit so that they
    cover memory experiments of either basis and any number of rounds.
    """
    layers = syndrome_layers(layout)
    order = ("reset_data", "h_even", "h_odd") + ROUND_ORDER + ("measure_data",)
    return Circuit(layout.n_qubits, tuple(layers[name] for name in order))


@dataclass(frozen=True)
class MemoryExperimentSpec:
    d: int
    rounds: int
    basis: str = "Z"

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        _check_basis(self.basis)


@dataclass(frozen=True)
class DetectorSet:
    """Detectors and the logical observable as sets of measurement indices."""

    detectors: tuple[tuple[int, ...], ...]
    observable: tuple[int, ...]
    coords: tuple[tuple[int, int, int], ...] = ()  # (i, j, round) per detector

    @property
    def n_detectors(self) -> int:
        return len(self.detectors)

    def evaluate(self, measurement_flips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Detector and observable flips from ``(n_meas, shots)`` measurement flips."""
        shots = measurement_flips.shape[1]
        dets = np.zeros((self.n_detectors, shots), dtype=bool)
        for k, members in enumerate(self.detectors):
            dets[k] = np.bitwise_xor.reduce(measurement_flips[list(members)], axis=0)
        obs = np.bitwise_xor.reduce(measurement_flips[list(self.observable)], axis=0)
        return dets, obs

    def to_json(self) -> str:
        return json.dumps(
            {
                "detectors": [list(d) for d in self.detectors],
                "observable": list(self.observable),
                "coords": [list(c) for c in self.coords],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> DetectorSet:
        data = json.loads(text)
        return cls(
            tuple(tuple(d) for d in data["detectors"]),
            tuple(data["observable"]),
            tuple(tuple(c) for c in data.get("coords", [])),
        )


def build_memory_circuit(spec: MemoryExperimentSpec) -> tuple[Circuit, DetectorSet]:
    layout = build_layout(spec.d)
    layers = syndrome_layers(layout)
    h_name = "h_even" if spec.basis == "Z" else "h_odd"
    seq = [layers["reset_data"], layers[h_name]]
    for _ in range(spec.rounds):
        seq.extend(layers[name] for name in ROUND_ORDER)
    seq.extend([layers[h_name], layers["measure_data"]])
    circuit = Circuit(layout.n_qubits, tuple(seq))

    n_anc = layout.n_measure
    color = layout.detector_color(spec.basis)

    def anc_meas(rnd: int, k: int) -> int:
        return rnd * n_anc + k

    final_offset = spec.rounds * n_anc
    detectors, coords = [], []
    for k, p in enumerate(layout.plaquettes):
        if p.color == color:
            detectors.append((anc_meas(0, k),))
            coords.append((p.i, p.j, 0))
    for rnd in range(1, spec.rounds):
        for k, p in enumerate(layout.plaquettes):
            detectors.append((anc_meas(rnd - 1, k), anc_meas(rnd, k)))
            coords.append((p.i, p.j, rnd))
    for k, p in enumerate(layout.plaquettes):
        if p.color == color:
            members = tuple(final_offset + q for q in p.data_qubits) + (anc_meas(spec.rounds - 1, k),)
            detectors.append(tuple(sorted(members)))
            coords.append((p.i, p.j, spec.rounds))
    observable = tuple(final_offset + q for q in layout.logical_support(spec.basis))
    return circuit, DetectorSet(tuple(detectors), observable, tuple(coords))


def check_code(layout: SurfaceCodeLayout) -> None:
    """Raise if stabilizers or logicals fail their commutation relations."""
    stabs = [layout.stabilizer(p) for p in layout.plaquettes]
    for a in range(len(stabs)):
        for b in range(a + 1, len(stabs)):
            if symplectic_product(stabs[a], stabs[b]):
                raise AssertionError(f"stabilizers {a} and {b} anticommute")
    lz, lx = layout.logical("Z"), layout.logical("X")
    for s in stabs:
        if symplectic_product(s, lz) or symplectic_product(s, lx):
            raise AssertionError("logical operator anticommutes with a stabilizer")
    if not symplectic_product(lz, lx):
        raise AssertionError("logical operators commute")
