import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EJM_GRID, builders, random_state
from qmfe import measurements as ms
from qmfe.errors import NumericalError, ValidationError
from qmfe.measurements import (
    MeasurementDevice,
    NoiseSpec,
    Povm,
    Pvm,
    apply_depolarizing,
    apply_noise,
    apply_unitary_error,
    bell_pvm,
    computational_pvm,
    ejm_pvm,
    random_povm_near,
)

SIGMAS = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]


def bloch_vector(psi):
    rho = np.outer(psi, psi.conj())
    return np.array([np.trace(rho @ s).real for s in SIGMAS])


def assert_valid_povm(povm: Povm, atol=1e-9):
    d = povm.dim
    np.testing.assert_allclose(povm.elements.sum(axis=0), np.eye(d), atol=atol)
    for v in povm.elements:
        w = np.linalg.eigvalsh(v)
        assert w.min() >= -atol and w.max() <= 1 + atol


class TestBuilders:
    def test_computational_one_qubit(self):
        pvm = computational_pvm(1)
        np.testing.assert_allclose(pvm.elements, [np.diag([1, 0]), np.diag([0, 1])])

    def test_computational_two_qubits(self):
        pvm = computational_pvm(2)
        assert len(pvm) == 4
        for k in range(4):
            expected = np.zeros((4, 4))
            expected[k, k] = 1
            np.testing.assert_allclose(pvm.elements[k], expected)

    def test_computational_cap(self):
        with pytest.raises(ValidationError):
            computational_pvm(7)
        assert computational_pvm(7, cap=7).n == 7

    def test_bell_first_element_expansion(self):
        # Phi+ = (II + XX - YY + ZZ) / 4 in unnormalized Paulis.
        pvm = bell_pvm()
        s = {w: np.kron(a, b) for w, (a, b) in zip(["II", "XX", "YY", "ZZ"], [(np.eye(2), np.eye(2))] + [(m, m) for m in SIGMAS])}
        expected = (s["II"] + s["XX"] - s["YY"] + s["ZZ"]) / 4
        np.testing.assert_allclose(pvm.elements[0], expected, atol=1e-15)

    def test_bell_order(self):
        pvm = bell_pvm()
        r = 1 / math.sqrt(2)
        expected = [[r, 0, 0, r], [r, 0, 0, -r], [0, r, r, 0], [0, r, -r, 0]]
        np.testing.assert_allclose(pvm.vectors, expected)

    @pytest.mark.parametrize("name,pvm", builders())
    def test_pvm_invariants(self, name, pvm):
        d = pvm.dim
        np.testing.assert_allclose(pvm.elements.sum(axis=0), np.eye(d), atol=1e-9)
        for k, e in enumerate(pvm.elements):
            np.testing.assert_allclose(e @ e, e, atol=1e-9)
            assert np.trace(e).real == pytest.approx(1, abs=1e-9)
            for j in range(k):
                assert abs(np.trace(e @ pvm.elements[j])) < 1e-9

    def test_build_pvm_dispatch(self):
        assert ms.build_pvm("bell").name == "bell"
        assert ms.build_pvm("computational", n=3).n == 3
        assert ms.build_pvm("ejm", math.pi / 3).n == 2
        with pytest.raises(ValidationError):
            ms.build_pvm("ghz")


class TestEjm:
    def test_tetrahedron_states_point_at_vertices(self):
        for b in range(4):
            np.testing.assert_allclose(bloch_vector(ms.tetrahedron_state(b)), ms.TETRAHEDRON[b], atol=1e-12)
            np.testing.assert_allclose(bloch_vector(ms.tetrahedron_state(b, antipodal=True)), -ms.TETRAHEDRON[b], atol=1e-12)

    @given(st.floats(0, 2 * math.pi, exclude_max=True))
    def test_amplitudes_have_unit_norm(self, theta):
        e = complex(math.cos(theta), math.sin(theta))
        assert abs(math.sqrt(3) + e) ** 2 + abs(math.sqrt(3) - e) ** 2 == pytest.approx(8)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 2 * math.pi, exclude_max=True))
    def test_valid_for_any_theta(self, theta):
        pvm = ejm_pvm(theta)
        np.testing.assert_allclose(np.linalg.norm(pvm.vectors, axis=1), 1, atol=1e-12)

    @pytest.mark.parametrize("theta", [0, math.pi / 4, math.pi / 3, math.pi / 2])
    def test_completeness(self, theta):
        np.testing.assert_allclose(ejm_pvm(theta).elements.sum(axis=0), np.eye(4), atol=1e-9)

    def test_fallback_never_needed_on_grid(self):
        for theta in EJM_GRID:
            Pvm(ms._ejm_vectors(theta, flip=False))

    def test_non_finite_theta(self):
        with pytest.raises(ValidationError):
            ejm_pvm(float("nan"))

    def test_half_pi_is_bell_up_to_local_cliffords(self):
        """Search local Clifford pairs for one mapping EJM(pi/2) onto the Bell basis."""
        h = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
        s = np.diag([1, 1j])
        group = [np.eye(2, dtype=complex)]
        frontier = list(group)
        # Close {H, S} under multiplication modulo global phase: 24 elements.
        while frontier:
            nxt = []
            for g in frontier:
                for gen in (h, s):
                    cand = gen @ g
                    phase = cand.flat[np.flatnonzero(np.abs(cand) > 1e-9)[0]]
                    cand = cand * abs(phase) / phase
                    if not any(np.allclose(cand, x, atol=1e-9) for x in group):
                        group.append(cand)
                        nxt.append(cand)
            frontier = nxt
        assert len(group) == 24

        ejm = ejm_pvm(math.pi / 2).vectors
        bell = bell_pvm().vectors
        best = math.inf
        for u, v in itertools.product(group, repeat=2):
            mapped = ejm @ np.kron(u, v).T
            # Phase-insensitive distance: |<bell_k|x>| = 1 means equal up to phase.
            overlaps = np.abs(mapped.conj() @ bell.T)
            dist = np.sqrt(np.maximum(0, 2 - 2 * overlaps.max(axis=1))).max()
            best = min(best, dist)
        assert best < 1e-6


class TestPvmValidation:
    def test_not_orthogonal(self):
        with pytest.raises(ValidationError, match="orthogonal"):
            Pvm(np.array([[1, 0], [1, 1]]) / np.array([[1], [math.sqrt(2)]]))

    def test_not_normalized(self):
        with pytest.raises(ValidationError, match="unit"):
            Pvm(np.array([[2, 0], [0, 1]]))

    def test_not_power_of_two(self):
        with pytest.raises(ValidationError):
            Pvm(np.eye(3))

    def test_povm_incomplete(self):
        with pytest.raises(ValidationError, match="identity"):
            Povm(np.array([np.diag([1, 0]), np.diag([0, 0.5])]))

    def test_povm_eigenvalue_range(self):
        with pytest.raises(ValidationError, match="eigenvalues"):
            Povm(np.array([np.diag([1.5, 0]), np.diag([-0.5, 1])]))

    def test_povm_hermitian(self):
        with pytest.raises(ValidationError, match="Hermitian"):
            Povm(np.array([[[0.5, 0.1], [0, 0.5]], [[0.5, -0.1], [0, 0.5]]]))

    def test_immutable(self):
        pvm = bell_pvm()
        with pytest.raises(ValueError):
            pvm.vectors[0, 0] = 0


class TestNoise:
    def test_zero_rate_is_identity(self, bell):
        np.testing.assert_allclose(apply_depolarizing(bell, 0).elements, bell.elements)

    def test_full_rate_is_fully_mixing(self, bell):
        for v in apply_depolarizing(bell, 1).elements:
            np.testing.assert_allclose(v, np.eye(4) / 4, atol=1e-15)

    def test_bell_fidelity_at_point_one(self, bell, bell_noisy):
        f = np.mean([np.trace(bell.elements[k] @ bell_noisy.elements[k]).real for k in range(4)])
        assert f == pytest.approx(0.925, abs=1e-12)

    def test_equivalent_to_depolarizing_the_input(self, bell):
        rng = np.random.default_rng(5)
        p = 0.37
        povm = apply_depolarizing(bell, p)
        rho = random_state(rng, 4)
        channel = (1 - p) * rho + p * np.eye(4) / 4
        for k in range(4):
            assert np.trace(povm.elements[k] @ rho).real == pytest.approx(np.trace(bell.elements[k] @ channel).real, abs=1e-14)

    @pytest.mark.parametrize("name,pvm", builders())
    def test_validity_and_lemma2_on_grid(self, name, pvm):
        for p in np.linspace(0, 1, 11):
            povm = apply_depolarizing(pvm, p)
            assert_valid_povm(povm)
            assert np.einsum("kij,kji->", povm.elements, povm.elements).real <= pvm.dim + 1e-9

    @pytest.mark.parametrize("p", [-0.1, 1.1, float("nan")])
    def test_invalid_rate(self, bell, p):
        with pytest.raises(ValidationError):
            apply_depolarizing(bell, p)

    def test_noise_spec(self, bell):
        with pytest.raises(ValidationError):
            NoiseSpec("amplitude", 0.1)
        np.testing.assert_allclose(apply_noise(bell, NoiseSpec()).elements, bell.elements)
        np.testing.assert_allclose(apply_noise(bell, NoiseSpec("depolarizing", 0.2)).elements, apply_depolarizing(bell, 0.2).elements)

    def test_unitary_error(self, bell):
        u = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))
        povm = apply_unitary_error(bell, u)
        assert_valid_povm(povm)
        np.testing.assert_allclose(povm.elements[0], u.conj().T @ bell.elements[0] @ u)
        with pytest.raises(ValidationError):
            apply_unitary_error(bell, 2 * np.eye(4))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.001, 2.0))
    def test_random_povm_is_valid(self, seed, strength):
        povm = random_povm_near(ejm_pvm(1.0), strength, np.random.default_rng(seed))
        assert_valid_povm(povm)


class TestDevice:
    def test_computational_zero(self):
        dev = MeasurementDevice(computational_pvm(1).as_povm(), seed=1)
        assert all(dev.measure(np.diag([1, 0])) == 0 for _ in range(50))
        assert dev.call_count == 50

    def test_bell_eigenstate(self, bell):
        dev = MeasurementDevice(bell.as_povm(), seed=2)
        assert set(dev.measure_many(bell.elements, np.zeros(200, dtype=int))) == {0}

    def test_bell_noisy_frequency(self, bell, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=3)
        out = dev.measure_many(bell.elements, np.zeros(100_000, dtype=int))
        assert np.mean(out == 0) == pytest.approx(0.925, abs=0.005)
        assert dev.call_count == 100_000

    def test_call_count_per_measure(self, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=0)
        rho = np.eye(4) / 4
        for i in range(1, 6):
            dev.measure(rho)
            assert dev.call_count == i

    def test_determinism(self, bell_noisy):
        rng = np.random.default_rng(0)
        states = np.array([random_state(rng, 4) for _ in range(5)])
        which = rng.integers(0, 5, size=300)
        a = MeasurementDevice(bell_noisy, seed=77)
        b = MeasurementDevice(bell_noisy, seed=77)
        np.testing.assert_array_equal(a.measure_many(states, which), b.measure_many(states, which))
        assert [a.measure(states[0]) for _ in range(20)] == [b.measure(states[0]) for _ in range(20)]
        assert a.call_count == b.call_count == 320

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_born_rule_frequencies(self, seed):
        rng = np.random.default_rng(seed)
        povm = random_povm_near(bell_pvm(), 0.5, rng)
        rho = random_state(rng, 4)
        n = 20_000
        dev = MeasurementDevice(povm, seed=seed)
        freq = np.bincount(dev.measure_many(rho, np.zeros(n, dtype=int)), minlength=4) / n
        probs = np.einsum("kij,ji->k", povm.elements, rho).real
        assert np.all(np.abs(freq - probs) <= 5 / math.sqrt(n))

    def test_rejects_non_density_input(self, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=0)
        with pytest.raises(ValidationError):
            dev.measure(np.eye(4))
        with pytest.raises(ValidationError):
            dev.measure(np.eye(2) / 2)
        assert dev.call_count == 0

    def test_negative_probability(self):
        # A set that passes a loose tolerance but has a slightly negative effect.
        eps = 1e-4
        povm = Povm(np.array([np.diag([1 + eps, 0]), np.diag([-eps, 1])]), atol=1e-3)
        dev = MeasurementDevice(povm, seed=0)
        with pytest.raises(NumericalError):
            dev.measure(np.diag([1.0, 0.0]))

    def test_selector_out_of_range(self, bell_noisy, bell):
        dev = MeasurementDevice(bell_noisy, seed=0)
        with pytest.raises(IndexError):
            dev.measure_many(bell.elements, np.array([4]))

    def test_counts_match_shot_distribution(self, bell, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=9)
        counts = dev.measure_counts(bell.elements, np.array([0, 2]), np.array([50_000, 30]))
        assert counts.shape == (2, 4)
        np.testing.assert_array_equal(counts.sum(axis=1), [50_000, 30])
        assert counts[0, 0] / 50_000 == pytest.approx(0.925, abs=0.005)
        assert dev.call_count == 50_030

    def test_counts_validation(self, bell, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=9)
        with pytest.raises(ValidationError):
            dev.measure_counts(bell.elements, np.array([0]), np.array([1, 2]))
        with pytest.raises(ValidationError):
            dev.measure_counts(bell.elements, np.array([0]), np.array([-1]))

    def test_accepts_generator(self, bell_noisy):
        dev = MeasurementDevice(bell_noisy, seed=np.random.default_rng(0))
        assert dev.measure(np.eye(4) / 4) in range(4)

    def test_residual_mass_goes_to_last_outcome(self):
        dev = MeasurementDevice(computational_pvm(1).as_povm(), seed=0)
        probs = np.array([[1 - 1e-12, 0.0]])
        dev.rng = np.random.Generator(np.random.Philox(0))
        # Any uniform at or above the cumulative mass lands in the final bucket.
        assert dev._sample(probs).item() in (0, 1)
        assert dev._sample(np.array([[0.0, 0.0]])).item() == 1
