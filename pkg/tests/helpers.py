"""Shared generators for tests."""

import numpy as np

from noiseaware.circuit import Circuit, make_layer


def random_small_circuit(rng: np.random.Generator, n_min: int = 2, n_max: int = 4, max_layers: int = 2) -> Circuit:
    """Reset, one or more random unitary layers, then measurement of every qubit."""
    n = int(rng.integers(n_min, n_max + 1))
    layers = [make_layer("reset", [("ResetZ", (q,)) for q in range(n)])]
    for li in range(int(rng.integers(1, max_layers + 1))):
        free = [int(q) for q in rng.permutation(n)]
        gates = []
        while free:
            if len(free) >= 2 and rng.random() < 0.5:
                gates.append((str(rng.choice(["CX", "CZ"])), (free.pop(), free.pop())))
            else:
                gates.append((str(rng.choice(["H", "S", "X", "Z", "Idle"])), (free.pop(),)))
        layers.append(make_layer(f"u{li}", gates))
    layers.append(make_layer("meas", [("MeasureZ", (q,)) for q in range(n)]))
    return Circuit(n, tuple(layers))
