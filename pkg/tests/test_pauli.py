import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noiseaware.pauli import (
    PauliChannel,
    PauliString,
    channel_to_eigenvalues,
    commutation_sign,
    depolarizing_channel,
    eigenvalue_jacobian,
    eigenvalues_to_channel,
    label_index,
    pauli_labels,
    walsh_hadamard_matrix,
)

labels_1q = st.sampled_from(pauli_labels(1))


def random_channel(rng, n):
    p = rng.dirichlet(np.ones(4**n))
    return PauliChannel(n, p)


def test_label_order():
    assert pauli_labels(1) == ("I", "X", "Y", "Z")
    assert pauli_labels(2)[:5] == ("II", "IX", "IY", "IZ", "XI")
    assert all(label_index(lbl) == i for i, lbl in enumerate(pauli_labels(2)))


@pytest.mark.parametrize("n", [1, 2])
def test_walsh_hadamard_is_orthogonal(n):
    f = walsh_hadamard_matrix(n)
    np.testing.assert_array_equal(f @ f, 4**n * np.eye(4**n))


@pytest.mark.parametrize("n", [1, 2])
def test_round_trip(rng, n):
    for _ in range(200):
        ch = random_channel(rng, n)
        back = eigenvalues_to_channel(channel_to_eigenvalues(ch))
        assert np.max(np.abs(back.probs - ch.probs)) <= 1e-12


def test_depolarizing_eigenvalues():
    ch = depolarizing_channel(2, 0.03)
    ev = channel_to_eigenvalues(ch).values
    # Every non-identity eigenvalue of a depolarizing channel is 1 - 16 p / 15.
    np.testing.assert_allclose(ev, 1 - 16 * 0.03 / 15, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2])
def test_jacobian_matches_affine_map(rng, n):
    jac = eigenvalue_jacobian(n)
    for _ in range(20):
        ch = random_channel(rng, n)
        lam = channel_to_eigenvalues(ch).values
        np.testing.assert_allclose(lam, 1 + jac @ ch.errors, atol=1e-13)


@given(labels_1q, labels_1q)
def test_commutation_single_qubit(a, b):
    pa, pb = PauliString.from_label(a), PauliString.from_label(b)
    expected = 1 if "I" in (a, b) or a == b else -1
    assert commutation_sign(pa, pb) == expected


@given(st.lists(labels_1q, min_size=1, max_size=5), st.lists(labels_1q, min_size=1, max_size=5))
@settings(max_examples=200)
def test_product_commutation_is_multiplicative(a, b):
    n = min(len(a), len(b))
    pa, pb = PauliString.from_label("".join(a[:n])), PauliString.from_label("".join(b[:n]))
    sign = 1
    for x, y in zip(a[:n], b[:n]):
        sign *= commutation_sign(PauliString.from_label(x), PauliString.from_label(y))
    assert commutation_sign(pa, pb) == sign


def test_channel_validation():
    with pytest.raises(ValueError):
        PauliChannel(1, np.array([0.5, 0.5, 0.5, -0.5]))
    with pytest.raises(ValueError):
        PauliChannel(1, np.array([0.9, 0.0, 0.0]))
    with pytest.raises(ValueError):
        depolarizing_channel(3, 0.1)
