import numpy as np
import pytest

from paircam.cam import (
    baseline_grad_cam,
    deep_similarity,
    gradient_interaction,
    interaction_cam,
    joint_activation,
    upsample_normalize,
)
from paircam.errors import InputShapeError
from paircam.types import ImagePair


def random_pair(side=32, seed=0):
    rng = np.random.default_rng(seed)
    return ImagePair(
        rng.random((3, side, side), dtype=np.float32),
        rng.random((3, side, side), dtype=np.float32),
    )


class TestBaselineGradCam:
    def test_pointwise_rectified_weighting(self):
        # K=1: [grad]_+ element-wise against the activations
        act = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
        grad = np.array([[[-1.0, 1.0], [1.0, -1.0]]], dtype=np.float32)
        raw = (np.maximum(grad, 0.0) * act).sum(axis=0)
        np.testing.assert_allclose(raw, [[0.0, 2.0], [3.0, 0.0]])

    def test_zero_gradients_zero_maps(self):
        from .conftest import constant_model

        expl = baseline_grad_cam(constant_model(), random_pair(seed=1))
        assert np.array_equal(expl.map1, np.zeros_like(expl.map1))

    def test_identical_pair_symmetric(self, fresh_model):
        rng = np.random.default_rng(2)
        img = rng.random((3, 32, 32), dtype=np.float32)
        expl = baseline_grad_cam(fresh_model, ImagePair(img, img.copy()))
        np.testing.assert_allclose(expl.map1, expl.map2, atol=1e-5)

    def test_output_resolution_and_range(self, fresh_model):
        expl = baseline_grad_cam(fresh_model, random_pair(seed=3))
        assert expl.map1.shape == (32, 32)
        assert 0.0 <= expl.map1.min() and expl.map1.max() <= 1.0


class TestJointActivation:
    def test_mean_reduction(self):
        a1 = np.array([[[2.0, 2.0]], [[0.0, 0.0]]], dtype=np.float32)
        a2 = np.array([[[3.0, 3.0]], [[5.0, 5.0]]], dtype=np.float32)
        np.testing.assert_allclose(joint_activation(a1, a2, "mean"), [6.0, 0.0])

    def test_max_reduction(self):
        a1 = np.array([[[1.0, 4.0]]], dtype=np.float32)
        a2 = np.array([[[5.0, 2.0]]], dtype=np.float32)
        np.testing.assert_allclose(joint_activation(a1, a2, "max"), [20.0])

    def test_attention_on_constant_equals_mean(self):
        rng = np.random.default_rng(4)
        base = rng.random((5, 1, 1)).astype(np.float32)
        a = np.repeat(np.repeat(base, 3, axis=1), 3, axis=2)  # spatially constant
        np.testing.assert_allclose(
            joint_activation(a, a, "attention"),
            joint_activation(a, a, "mean"),
            rtol=1e-5,
        )

    def test_shape_mismatch(self):
        with pytest.raises(InputShapeError):
            joint_activation(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))

    def test_unknown_reduction(self):
        with pytest.raises(ValueError):
            joint_activation(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), "median")


class TestGradientInteraction:
    def test_small_example(self):
        g1 = np.array([[[1.0]], [[0.0]]], dtype=np.float32)
        g2 = np.array([[[0.0]], [[1.0]]], dtype=np.float32)
        r1, r2 = gradient_interaction(g1, g2)
        # G = [[0, 1], [0, 0]]: row maxima (1, 0), column maxima (0, 1)
        np.testing.assert_allclose(r1, [1.0, 0.0])
        np.testing.assert_allclose(r2, [0.0, 1.0])

    def test_gram_case_symmetric(self):
        rng = np.random.default_rng(5)
        g = rng.normal(size=(4, 3, 3)).astype(np.float32)
        r1, r2 = gradient_interaction(g, g)
        np.testing.assert_allclose(r1, r2, rtol=1e-6)

    def test_zero_gradients(self):
        g = np.zeros((3, 2, 2), dtype=np.float32)
        r1, r2 = gradient_interaction(g, np.ones_like(g))
        assert np.array_equal(r1, np.zeros(3))
        assert np.array_equal(r2, np.zeros(3))

    def test_row_column_maxima_brute_force(self):
        rng = np.random.default_rng(6)
        g1 = rng.normal(size=(6, 2, 3)).astype(np.float32)
        g2 = rng.normal(size=(6, 2, 3)).astype(np.float32)
        r1, r2 = gradient_interaction(g1, g2)
        G = np.zeros((6, 6))
        for k in range(6):
            for l in range(6):
                G[k, l] = float((g1[k].ravel() * g2[l].ravel()).sum())
        np.testing.assert_allclose(r1, G.max(axis=1), rtol=1e-5)
        np.testing.assert_allclose(r2, G.max(axis=0), rtol=1e-5)


class TestInteractionCam:
    def test_unit_weights_reduce_to_activation_sum(self):
        # J = 1 and g = 1: the weighted sum collapses to sum_k A_k
        rng = np.random.default_rng(7)
        acts = rng.random((5, 3, 3)).astype(np.float32)
        J = np.ones(5, dtype=np.float32)
        g = np.ones(5, dtype=np.float32)
        weighted = np.tensordot(np.maximum(J * g, 0.0), acts, axes=([0], [0]))
        np.testing.assert_allclose(weighted, acts.sum(axis=0), rtol=1e-6)

    def test_hand_worked_example(self):
        # 1x1 spatial, A1=(2,3), J=(2,12), g1=(1,-1): E1 = relu(2)*2 + relu(-12)*3 = 4
        acts = np.array([[[2.0]], [[3.0]]], dtype=np.float32)
        J = np.array([2.0, 12.0], dtype=np.float32)
        g1 = np.array([1.0, -1.0], dtype=np.float32)
        weighted = np.tensordot(np.maximum(J * g1, 0.0), acts, axes=([0], [0]))
        assert weighted[0, 0] == 4.0

    def test_all_nonpositive_weights_zero_map(self):
        acts = np.abs(np.random.default_rng(8).random((4, 2, 2))).astype(np.float32)
        J = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32)
        g = -np.ones(4, dtype=np.float32)
        weighted = np.tensordot(np.maximum(J * g, 0.0), acts, axes=([0], [0]))
        assert np.array_equal(weighted, np.zeros((2, 2), dtype=np.float32))

    @pytest.mark.parametrize("reduction", ["mean", "max", "attention"])
    def test_identical_pair_symmetric(self, fresh_model, reduction):
        rng = np.random.default_rng(9)
        img = rng.random((3, 32, 32), dtype=np.float32)
        pair = ImagePair(img, img.copy())
        for use_gi in (True, False):
            expl = interaction_cam(fresh_model, pair, reduction, use_gi)
            np.testing.assert_allclose(expl.map1, expl.map2, atol=1e-5)

    def test_positive_scaling_preserves_ranking(self):
        # scaling both activation stacks by c > 0 scales the map by c^3 under
        # mean/max reductions with fixed gradients; the argsort is unchanged
        rng = np.random.default_rng(10)
        a1 = rng.random((4, 3, 3)).astype(np.float32)
        a2 = rng.random((4, 3, 3)).astype(np.float32)
        g1 = rng.normal(size=(4, 3, 3)).astype(np.float32)
        g2 = rng.normal(size=(4, 3, 3)).astype(np.float32)
        c = 2.5
        for reduction in ("mean", "max"):
            r1, _ = gradient_interaction(g1, g2)
            J = joint_activation(a1, a2, reduction)
            Jc = joint_activation(c * a1, c * a2, reduction)
            base = np.tensordot(np.maximum(J * r1, 0.0), a1, axes=([0], [0]))
            scaled = np.tensordot(np.maximum(Jc * r1, 0.0), c * a1, axes=([0], [0]))
            np.testing.assert_allclose(scaled, c**3 * base, rtol=1e-4)
            assert np.array_equal(np.argsort(scaled.ravel()), np.argsort(base.ravel()))

    def test_shape_invariant_to_channel_count(self, fresh_model):
        expl = interaction_cam(fresh_model, random_pair(seed=11), "mean", True)
        assert expl.map1.shape == (32, 32)


class TestDeepSimilarity:
    def test_matches_direct_formula(self, fresh_model):
        pair = random_pair(seed=12)
        expl = deep_similarity(fresh_model, pair)
        b1 = fresh_model.encode(pair.first)
        b2 = fresh_model.encode(pair.second)
        raw1 = np.tensordot(b2.pooled, b1.activations, axes=([0], [0]))
        expected = upsample_normalize(raw1, pair.spatial_shape)
        np.testing.assert_allclose(expl.map1, expected, atol=1e-6)

    def test_unit_pooled_vector_gives_activation_sum(self):
        rng = np.random.default_rng(13)
        acts = rng.random((4, 2, 2)).astype(np.float32)
        pooled = np.ones(4, dtype=np.float32)
        raw = np.tensordot(pooled, acts, axes=([0], [0]))
        np.testing.assert_allclose(raw, acts.sum(axis=0), rtol=1e-6)

    def test_identical_pair_symmetric(self, fresh_model):
        rng = np.random.default_rng(14)
        img = rng.random((3, 32, 32), dtype=np.float32)
        expl = deep_similarity(fresh_model, ImagePair(img, img.copy()))
        np.testing.assert_allclose(expl.map1, expl.map2, atol=1e-5)


class TestUpsampleNormalize:
    def test_identity_size_normalizes_only(self):
        m = np.array([[0.0, 2.0], [4.0, 8.0]], dtype=np.float32)
        out = upsample_normalize(m, (2, 2))
        np.testing.assert_allclose(out, m / 8.0)

    def test_constant_becomes_zero(self):
        out = upsample_normalize(np.full((3, 3), 5.0, dtype=np.float32), (6, 6))
        assert np.array_equal(out, np.zeros((6, 6), dtype=np.float32))

    def test_corner_values_preserved(self):
        m = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        out = upsample_normalize(m, (4, 4))
        assert out[0, 0] == 0.0 and out[0, 3] == 1.0
        assert out[3, 0] == 1.0 and out[3, 3] == 0.0

    def test_smaller_target_rejected(self):
        with pytest.raises(ValueError):
            upsample_normalize(np.zeros((4, 4)), (2, 2))
