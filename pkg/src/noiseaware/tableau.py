"""Stabilizer tableau simulation (Aaronson-Gottesman) with measurement.

Slow compared with frame propagation; used as an independent reference for
detector determinism and for checking frame-propagated fault signatures.
"""

from __future__ import annotations

import numpy as np

from .circuit import Circuit
from .pauli import PauliString


def _g(x1, z1, x2, z2):
    return np.where(
        x1 & z1,
        z2.astype(int) - x2.astype(int),
        np.where(x1, z2 * (2 * x2.astype(int) - 1), np.where(z1, x2 * (1 - 2 * z2.astype(int)), 0)),
    )


class TableauSimulator:
    def __init__(self, n_qubits: int, rng: np.random.Generator | int | None = None):
        n = n_qubits
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=bool)
        self.z = np.zeros((2 * n + 1, n), dtype=bool)
        self.r = np.zeros(2 * n + 1, dtype=bool)
        self.x[np.arange(n), np.arange(n)] = True
        self.z[n + np.arange(n), np.arange(n)] = True
        self.rng = np.random.default_rng(rng)

    def h(self, q):
        self.r ^= self.x[:, q] & self.z[:, q]
        self.x[:, q], self.z[:, q] = self.z[:, q].copy(), self.x[:, q].copy()

    def s(self, q):
        self.r ^= self.x[:, q] & self.z[:, q]
        self.z[:, q] ^= self.x[:, q]

    def cx(self, a, b):
        x, z = self.x, self.z
        self.r ^= x[:, a] & z[:, b] & ~(x[:, b] ^ z[:, a])
        x[:, b] ^= x[:, a]
        z[:, a] ^= z[:, b]

    def cz(self, a, b):
        self.h(b)
        self.cx(a, b)
        self.h(b)

    def pauli_x(self, q):
        self.r ^= self.z[:, q]

    def pauli_z(self, q):
        self.r ^= self.x[:, q]

    def apply_pauli(self, p: PauliString) -> None:
        for q in range(p.n):
            if p.x_bits[q]:
                self.pauli_x(q)
            if p.z_bits[q]:
                self.pauli_z(q)

    def _rowsum(self, targets: np.ndarray, src: int) -> None:
        x, z = self.x, self.z
        phase = _g(x[src][None, :], z[src][None, :], x[targets], z[targets]).sum(axis=1)
        total = 2 * self.r[targets].astype(int) + 2 * int(self.r[src]) + phase
        self.r[targets] = (total % 4) == 2
        x[targets] ^= x[src]
        z[targets] ^= z[src]

    def measure(self, q: int) -> int:
        n = self.n
        stab_hits = np.flatnonzero(self.x[n : 2 * n, q])
        if stab_hits.size:
            p = n + stab_hits[0]
            others = np.flatnonzero(self.x[: 2 * n, q])
            others = others[others != p]
            if others.size:
                self._rowsum(others, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p], self.z[p], self.r[p]
            self.x[p] = False
            self.z[p] = False
            self.z[p, q] = True
            outcome = int(self.rng.integers(2))
            self.r[p] = bool(outcome)
            return outcome
        scratch = 2 * n
        self.x[scratch] = False
        self.z[scratch] = False
        self.r[scratch] = False
        for i in np.flatnonzero(self.x[:n, q]):
            self._rowsum(np.array([scratch]), n + i)
        return int(self.r[scratch])

    def reset(self, q: int) -> None:
        if self.measure(q):
            self.pauli_x(q)

    def apply(self, kind: str, targets: tuple[int, ...]) -> int | None:
        if kind == "H":
            self.h(*targets)
        elif kind == "S":
            self.s(*targets)
        elif kind == "X":
            self.pauli_x(*targets)
        elif kind == "Z":
            self.pauli_z(*targets)
        elif kind == "CX":
            self.cx(*targets)
        elif kind == "CZ":
            self.cz(*targets)
        elif kind == "MeasureZ":
            return self.measure(*targets)
        elif kind == "ResetZ":
            self.reset(*targets)
        elif kind in ("Idle", "MeasureIdle"):
            pass
        else:
            raise ValueError(f"unsupported gate kind {kind!r}")
        return None


def run_tableau(
    circuit: Circuit,
    seed: int | None = None,
    faults: dict[int, PauliString] | None = None,
) -> np.ndarray:
    """Measurement outcomes of one noiseless run, with optional Pauli faults.

    ``faults`` maps a layer position to a Pauli applied just before that layer.
    Random outcomes come from ``seed``; inserting Paulis does not change which
    measurements are random, so runs with the same seed are paired.
    """
    faults = faults or {}
    sim = TableauSimulator(circuit.n_qubits, seed)
    outcomes = []
    for li, layer in enumerate(circuit.layers):
        if li in faults:
            sim.apply_pauli(faults[li])
        for g in layer.gates:
            res = sim.apply(g.kind, g.targets)
            if res is not None:
                outcomes.append(res)
    if len(circuit.layers) in faults:
        sim.apply_pauli(faults[len(circuit.layers)])
    return np.array(outcomes, dtype=np.uint8)
