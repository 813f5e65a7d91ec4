"""Unit-sphere math: normalization, log-densities, posteriors, assignments."""

import numpy as np
import pytest

from bamp.hypersphere import (
    HypersphereError,
    VmfParams,
    assignment_weights,
    mixture_class_posterior,
    normalize,
    vmf_log_density_unnorm,
)
from oracles import naive_posterior


def random_unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_mixture(rng, n_classes, k, dim):
    protos = [np.stack([random_unit(rng, dim) for _ in range(k)]) for _ in range(n_classes)]
    weights = []
    for _ in range(n_classes):
        w = rng.uniform(0.1, 1.0, size=k)
        weights.append(w / w.sum())
    return protos, weights


class TestNormalize:
    def test_three_four(self):
        np.testing.assert_allclose(normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-15)

    def test_idempotent_on_unit_vectors(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            u = random_unit(rng, 6)
            np.testing.assert_allclose(normalize(u), u, atol=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(HypersphereError, match="zero"):
            normalize(np.zeros(3))

    def test_non_finite_rejected(self):
        with pytest.raises(HypersphereError):
            normalize(np.array([1.0, np.inf]))


class TestVmf:
    def test_params_temperature_is_reciprocal(self):
        p = VmfParams(mean=np.array([1.0, 0.0]), concentration=4.0)
        assert p.temperature == 0.25
        assert VmfParams(np.array([1.0, 0.0]), 0.0).temperature == np.inf

    def test_negative_concentration_rejected(self):
        with pytest.raises(HypersphereError):
            VmfParams(mean=np.array([1.0, 0.0]), concentration=-1.0)
        with pytest.raises(HypersphereError):
            vmf_log_density_unnorm(np.array([1.0, 0.0]), np.array([1.0, 0.0]), -2.0)

    def test_at_mean_equals_concentration(self):
        z = normalize(np.array([1.0, 2.0, -1.0]))
        assert vmf_log_density_unnorm(z, z, 10.0) == pytest.approx(10.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert vmf_log_density_unnorm(
            np.array([1.0, 0.0]), np.array([0.0, 1.0]), 7.5
        ) == pytest.approx(0.0, abs=1e-12)

    def test_zero_concentration_uniform(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            z, p = random_unit(rng, 4), random_unit(rng, 4)
            assert vmf_log_density_unnorm(z, p, 0.0) == 0.0

    def test_non_unit_inputs_rejected(self):
        with pytest.raises(HypersphereError, match="unit"):
            vmf_log_density_unnorm(np.array([2.0, 0.0]), np.array([1.0, 0.0]), 1.0)


class TestPosterior:
    def test_single_class(self):
        rng = np.random.default_rng(2)
        protos, weights = random_mixture(rng, 1, 3, 5)
        out = mixture_class_posterior(random_unit(rng, 5), protos, weights, tau=0.5)
        np.testing.assert_allclose(out, [1.0], atol=1e-15)

    def test_mirror_symmetry_gives_half(self):
        theta = 0.7
        protos = [
            np.array([[np.cos(theta), np.sin(theta)]]),
            np.array([[np.cos(theta), -np.sin(theta)]]),
        ]
        weights = [np.array([1.0]), np.array([1.0])]
        out = mixture_class_posterior(np.array([1.0, 0.0]), protos, weights, tau=0.3)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            protos, weights = random_mixture(rng, 3, 2, 4)
            z = random_unit(rng, 4)
            got = mixture_class_posterior(z, protos, weights, tau=0.7)
            want = naive_posterior(z, protos, weights, tau=0.7)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_simplex_property(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n_classes = int(rng.integers(1, 6))
            k = int(rng.integers(1, 5))
            dim = int(rng.integers(2, 8))
            protos, weights = random_mixture(rng, n_classes, k, dim)
            out = mixture_class_posterior(random_unit(rng, dim), protos, weights, tau=0.1)
            assert abs(out.sum() - 1.0) <= 1e-9
            assert np.all(out >= 0)

    def test_invariant_to_common_weight_rescaling(self):
        rng = np.random.default_rng(5)
        protos, weights = random_mixture(rng, 3, 3, 4)
        z = random_unit(rng, 4)
        base = mixture_class_posterior(z, protos, weights, tau=0.2)
        rescaled = [np.asarray(w) * 37.5 for w in weights]
        renormed = [w / w.sum() for w in rescaled]
        again = mixture_class_posterior(z, protos, renormed, tau=0.2)
        np.testing.assert_allclose(base, again, atol=1e-12)

    def test_monotone_in_own_prototype_alignment(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            protos, weights = random_mixture(rng, 3, 2, 5)
            z = random_unit(rng, 5)
            before = mixture_class_posterior(z, protos, weights, tau=0.3)[0]
            moved = [p.copy() for p in protos]
            # Pull one of class 0's prototypes toward z, leaving the rest alone.
            candidate = moved[0][0] + 0.5 * z
            candidate /= np.linalg.norm(candidate)
            if np.dot(candidate, z) <= np.dot(moved[0][0], z):
                continue
            moved[0][0] = candidate
            after = mixture_class_posterior(z, moved, weights, tau=0.3)[0]
            assert after >= before - 1e-12

    def test_weight_validation(self):
        protos = [np.array([[1.0, 0.0]])]
        with pytest.raises(HypersphereError, match="sum to 1"):
            mixture_class_posterior(np.array([1.0, 0.0]), protos, [np.array([0.5])], tau=1.0)
        with pytest.raises(HypersphereError, match="temperature|> 0"):
            mixture_class_posterior(np.array([1.0, 0.0]), protos, [np.array([1.0])], tau=0.0)
        with pytest.raises(HypersphereError):
            mixture_class_posterior(np.array([1.0, 0.0]), [], [], tau=1.0)


class TestAssignmentWeights:
    def test_single_prototype(self):
        out = assignment_weights(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]), tau_a=0.1)
        np.testing.assert_allclose(out, [1.0], atol=1e-15)

    def test_equidistant_prototypes_split_evenly(self):
        protos = np.array([[np.cos(0.5), np.sin(0.5)], [np.cos(0.5), -np.sin(0.5)]])
        out = assignment_weights(np.array([1.0, 0.0]), protos, tau_a=0.1)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)

    def test_softmax_of_similarity_one_zero(self):
        protos = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = assignment_weights(np.array([1.0, 0.0]), protos, tau_a=1.0)
        e = np.exp(1.0)
        np.testing.assert_allclose(out, [e / (e + 1.0), 1.0 / (e + 1.0)], atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        protos = np.stack([random_unit(rng, 4) for _ in range(5)])
        z = random_unit(rng, 4)
        base = assignment_weights(z, protos, tau_a=0.2)
        perm = rng.permutation(5)
        permuted = assignment_weights(z, protos[perm], tau_a=0.2)
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)

    def test_normalized_and_monotone(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            protos = np.stack([random_unit(rng, 6) for _ in range(4)])
            z = random_unit(rng, 6)
            w = assignment_weights(z, protos, tau_a=0.3)
            assert abs(w.sum() - 1.0) <= 1e-12
            sims = protos @ z
            order = np.argsort(sims)
            assert np.all(np.diff(w[order]) >= -1e-12)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(HypersphereError):
            assignment_weights(np.array([1.0, 0.0]), np.array([[1.0, 0.0]]), tau_a=0.0)
