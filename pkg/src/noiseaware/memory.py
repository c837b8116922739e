"""Memory experiments: paired syndrome sampling and decoding under several priors.

Syndrome stream format (little-endian)::

    bytes 0-3    magic b"SYN1"
    bytes 4-11   uint64 shot count
    bytes 12-15  uint32 detector count D
    bytes 16-19  uint32 observable count (always 1)
    then per shot ceil((D + 1) / 8) bytes: np.packbits (big bit order within
    each byte) of the D detector bits followed by the observable bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from .dem import DetectorErrorModel, FaultSignatures, build_dem
from .frame import sample_measurement_flips
from .matching import MatchingGraph, decode_batch, dem_to_matching_graph
from .noise import NoiseInstance
from .surface import MemoryExperimentSpec, build_memory_circuit

STREAM_MAGIC = b"SYN1"


@dataclass(frozen=True)
class MemoryExperiment:
    spec: MemoryExperimentSpec

    @cached_property
    def _built(self):
        return build_memory_circuit(self.spec)

    @property
    def circuit(self):
        return self._built[0]

    @property
    def detectors(self):
        return self._built[1]

    @cached_property
    def signatures(self) -> FaultSignatures:
        return FaultSignatures(self.circuit, self.detectors)

    def dem(self, noise: NoiseInstance) -> DetectorErrorModel:
        return build_dem(self.signatures, noise)

    def matching_graph(self, noise: NoiseInstance) -> MatchingGraph:
        return dem_to_matching_graph(self.dem(noise))


@lru_cache(maxsize=64)
def memory_experiment(d: int, rounds: int, basis: str) -> MemoryExperiment:
    """Cached experiment so signatures are shared across priors and instances."""
    return MemoryExperiment(MemoryExperimentSpec(d, rounds, basis))


@dataclass(frozen=True)
class SyndromeSample:
    syndromes: np.ndarray  # (shots, n_detectors) bool
    observable: np.ndarray  # (shots,) bool

    @property
    def shots(self) -> int:
        return self.observable.size

    @property
    def n_detectors(self) -> int:
        return self.syndromes.shape[1]

    def packed(self) -> np.ndarray:
        bits = np.concatenate([self.syndromes, self.observable[:, None]], axis=1)
        return np.packbits(bits, axis=1)

    def stream_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_bytes(self) -> bytes:
        header = STREAM_MAGIC + struct.pack("<QII", self.shots, self.n_detectors, 1)
        return header + self.packed().tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> SyndromeSample:
        if data[:4] != STREAM_MAGIC:
            raise ValueError("not a syndrome stream")
        shots, n_det, n_obs = struct.unpack("<QII", data[4:20])
        if n_obs != 1:
            raise ValueError("only single-observable streams are supported")
        width = (n_det + 1 + 7) // 8
        body = np.frombuffer(data[20:], dtype=np.uint8)
        if body.size != shots * width:
            raise ValueError("stream length does not match its header")
        bits = np.unpackbits(body.reshape(shots, width), axis=1, count=n_det + 1).astype(bool)
        return cls(bits[:, :n_det], bits[:, n_det])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> SyndromeSample:
        return cls.from_bytes(Path(path).read_bytes())


def sample_syndromes(circuit, detectors, truth: NoiseInstance, shots: int, seed) -> SyndromeSample:
    """Frame-simulate ``shots`` runs under ``truth``; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    flips = sample_measurement_flips(circuit, truth, shots, rng)
    dets, obs = detectors.evaluate(flips)
    return SyndromeSample(np.ascontiguousarray(dets.T), obs)


@dataclass(frozen=True)
class DecodeResult:
    failures: dict[str, np.ndarray]  # prior name -> (shots,) bool
    stream_hash: str

    @property
    def shots(self) -> int:
        return next(iter(self.failures.values())).size

    def counts(self) -> dict[str, int]:
        return {k: int(v.sum()) for k, v in self.failures.items()}


def sample_and_decode(
    circuit,
    detectors,
    truth: NoiseInstance,
    priors: dict[str, MatchingGraph] | MatchingGraph,
    shots: int,
    seed,
) -> DecodeResult:
    """Decode one sampled stream with every prior (paired comparison)."""
    if isinstance(priors, MatchingGraph):
        priors = {"prior": priors}
    sample = sample_syndromes(circuit, detectors, truth, shots, seed)
    failures = {
        name: decode_batch(graph, sample.syndromes) != sample.observable for name, graph in priors.items()
    }
    return DecodeResult(failures, sample.stream_hash())
