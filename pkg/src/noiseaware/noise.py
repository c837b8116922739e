"""Ground-truth circuit-level Pauli noise: log-normal and tuned depolarizing.

Conventions
-----------
* A gate's Pauli channel acts immediately *before* the ideal gate, so its
  eigenvalue for Pauli ``P`` is indexed by the Pauli entering the gate.
* ``MeasureZ`` noise is a classical outcome flip (an X error just before the
  measurement); ``ResetZ`` noise is an X error just after the reset.
* ``MeasureIdle`` gates (data qubits idling through a measurement layer) get a
  single-qubit Pauli channel in the measurement class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .circuit import Circuit, Gate, GateKey
from .pauli import PauliChannel, channel_to_eigenvalues, depolarizing_channel

CHANNEL_FILE_VERSION = 1


class MissingNoiseError(KeyError):
    pass


@dataclass(frozen=True)
class NoiseParameters:
    r1: float = 0.0005
    r2: float = 0.004
    rm: float = 0.008
    rr: float = 0.002
    s1: float = 0.5
    s2: float = 0.5
    sm: float = 0.25
    sr: float = 0.25
    # Measurement-idle rate; ``None`` means "same as rm".
    rm_idle: float | None = None

    def __post_init__(self):
        for name in ("r1", "r2", "rm", "rr"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        for name in ("s1", "s2", "sm", "sr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.rm_idle is not None and not 0 <= self.rm_idle < 1:
            raise ValueError("rm_idle must lie in [0, 1)")

    @property
    def measure_idle_rate(self) -> float:
        return self.rm if self.rm_idle is None else self.rm_idle

    def class_rate(self, kind: str) -> tuple[float, float]:
        """(mean rate, log-normal shape) for a gate kind."""
        if kind in ("CX", "CZ"):
            return self.r2, self.s2
        if kind == "MeasureIdle":
            return self.measure_idle_rate, self.sm
        if kind == "MeasureZ":
            return self.rm, self.sm
        if kind == "ResetZ":
            return self.rr, self.sr
        return self.r1, self.s1

    def with_zero_spread(self) -> NoiseParameters:
        return replace(self, s1=0.0, s2=0.0, sm=0.0, sr=0.0)


def key_to_str(key: GateKey) -> str:
    kind, targets, context = key
    return f"{kind} {','.join(map(str, targets))} @{context}"


def key_from_str(text: str) -> GateKey:
    head, _, context = text.partition(" @")
    kind, _, targets = head.partition(" ")
    return (kind, tuple(int(t) for t in targets.split(",")), context)


@dataclass(frozen=True, eq=False)
class NoiseInstance:
    """Pauli channels for channel gates and flip probabilities for measure/reset."""

    channels: Mapping[GateKey, PauliChannel]
    flips: Mapping[GateKey, float]
    seed: int | None = None
    label: str = ""
    meta: Mapping[str, object] = field(default_factory=dict)

    def channel(self, gate: Gate) -> PauliChannel:
        try:
            return self.channels[gate.key]
        except KeyError:
            raise MissingNoiseError(f"no channel for {key_to_str(gate.key)}") from None

    def flip(self, gate: Gate) -> float:
        try:
            return self.flips[gate.key]
        except KeyError:
            raise MissingNoiseError(f"no flip probability for {key_to_str(gate.key)}") from None

    def missing(self, circuit: Circuit) -> list[GateKey]:
        out = []
        for g in circuit.unique_gates():
            table = self.channels if g.has_channel else self.flips
            if g.key not in table:
                out.append(g.key)
        return out

    def is_noiseless(self) -> bool:
        return all(c.total_error == 0 for c in self.channels.values()) and all(
            f == 0 for f in self.flips.values()
        )

    def __eq__(self, other):
        if not isinstance(other, NoiseInstance):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {
            "version": CHANNEL_FILE_VERSION,
            "label": self.label,
            "seed": self.seed,
            "meta": dict(self.meta),
            "channels": {key_to_str(k): [float(p) for p in c.probs] for k, c in self.channels.items()},
            "flips": {key_to_str(k): float(f) for k, f in self.flips.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> NoiseInstance:
        channels = {}
        for k, probs in data["channels"].items():
            probs = np.asarray(probs, dtype=float)
            n = int(round(math.log(probs.size, 4)))
            channels[key_from_str(k)] = PauliChannel(n, probs, check=False)
        flips = {key_from_str(k): float(v) for k, v in data["flips"].items()}
        return cls(channels, flips, data.get("seed"), data.get("label", ""), data.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> NoiseInstance:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _lognormal_factors(rng: np.random.Generator, shape: float, size: int) -> np.ndarray:
    # Mean-one log-normal factors; exactly 1 when shape == 0.
    draws = rng.standard_normal(size)
    return np.exp(shape * draws - shape**2 / 2)


def sample_lognormal_instance(params: NoiseParameters, circuit: Circuit, seed: int) -> NoiseInstance:
    """Independent log-normal Pauli error probabilities for every gate.

    Each non-identity Pauli of a gate gets ``(r / K) * exp(s * N - s**2 / 2)``
    with ``K`` the number of non-identity Paulis, so the mean total error is
    the class rate ``r``. Measurement and reset flips are drawn the same way
    with ``K = 1``. Gates are visited in order of first appearance, which
    makes the instance a pure function of (params, circuit, seed).
    """
    rng = np.random.default_rng(seed)
    channels: dict[GateKey, PauliChannel] = {}
    flips: dict[GateKey, float] = {}
    for gate in circuit.unique_gates():
        rate, shape = params.class_rate(gate.kind)
        if gate.has_channel:
            k = 4**gate.arity - 1
            errors = (rate / k) * _lognormal_factors(rng, shape, k)
            total = errors.sum()
            if total >= 1:
                errors *= (1 - 1e-9) / total
            channels[gate.key] = PauliChannel.from_errors(errors, gate.arity)
        else:
            flips[gate.key] = float(min(rate * _lognormal_factors(rng, shape, 1)[0], 0.5))
    return NoiseInstance(channels, flips, seed, "lognormal", {"params": params.__dict__})


def tuned_depolarizing_instance(params: NoiseParameters, circuit: Circuit) -> NoiseInstance:
    channels: dict[GateKey, PauliChannel] = {}
    flips: dict[GateKey, float] = {}
    for gate in circuit.unique_gates():
        rate, _ = params.class_rate(gate.kind)
        if gate.has_channel:
            channels[gate.key] = depolarizing_channel(gate.arity, rate)
        else:
            flips[gate.key] = rate
    return NoiseInstance(channels, flips, None, "depolarizing", {"params": params.__dict__})


def noiseless_instance(circuit: Circuit) -> NoiseInstance:
    return tuned_depolarizing_instance(NoiseParameters(0, 0, 0, 0, 0, 0, 0, 0), circuit)


def true_gate_eigenvalues(noise: NoiseInstance, gates: list[Gate] | None = None) -> np.ndarray:
    """Concatenated identity-omitted eigenvalues of every channel gate.

    ``gates`` fixes the order; by default the instance's own key order.
    """
    if gates is None:
        chans = list(noise.channels.values())
    else:
        chans = [noise.channel(g) for g in gates if g.has_channel]
    if not chans:
        return np.zeros(0)
    return np.concatenate([channel_to_eigenvalues(c).values for c in chans])
