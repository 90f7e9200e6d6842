"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Criterion 9's Interaction-CAM half is a known honest failure at desk
scale (see the analysis in the project notes); the test asserts the criterion
as stated and reports the measured value.
"""

import json
import time

import numpy as np
import pytest
import torch

from paircam.cam import (
    deep_similarity_map,
    grad_cam_map,
    gradient_interaction,
    interaction_cam,
    interaction_map,
    joint_activation,
)
from paircam.cli import main as cli_main
from paircam.data import generate_corpus
from paircam.inversion import InversionConfig, alpha_norm, invert_features, tv_regularizer
from paircam.methods import ExplainOptions, make_explainer
from paircam.metrics import (
    _spearman,
    blur_baseline,
    insertion_deletion_curve,
    max_sensitivity,
    sanity_check,
)
from paircam.model import similarity
from paircam.occlusion import OcclusionConfig, conditional_occlusion, pairwise_occlusion
from paircam.saliency import averaged_transforms, input_x_gradient, smooth_grad
from paircam.train import contrastive_margin
from paircam.transforms import apply_transform, augment_pair
from paircam.types import ExplanationPair, ImagePair

from .conftest import OverlapStubModel, constant_model, planted_patch_pair


def report(criterion, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"\n[acceptance] criterion {criterion}: {status}  {detail}")
    return ok


def random_maps(shape, seed):
    rng = np.random.default_rng(seed)
    return ExplanationPair(
        rng.random(shape, dtype=np.float32),
        rng.random(shape, dtype=np.float32),
        method="random",
        normalization="minmax",
    )


class TestCriterion1EquationOracles:
    def test_equation_oracles(self):
        start = time.monotonic()
        rng = np.random.default_rng(0)
        tol = 1e-5
        for _ in range(20):
            K = int(rng.integers(1, 9))
            w, h = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            acts1 = rng.normal(size=(K, w, h)).astype(np.float32)
            acts2 = rng.normal(size=(K, w, h)).astype(np.float32)
            grads1 = rng.normal(size=(K, w, h)).astype(np.float32)
            grads2 = rng.normal(size=(K, w, h)).astype(np.float32)

            # Eq. (1): point-wise rectified gradients against activations
            expected = np.zeros((w, h))
            for k in range(K):
                for i in range(w):
                    for j in range(h):
                        g = grads1[k, i, j]
                        expected[i, j] += max(g, 0.0) * acts1[k, i, j]
            np.testing.assert_allclose(grad_cam_map(acts1, grads1), expected, atol=tol)

            # joint activation, all three reductions
            for reduction in ("mean", "max", "attention"):
                expected_j = np.zeros(K)
                for k in range(K):
                    flat1 = acts1[k].ravel()
                    flat2 = acts2[k].ravel()
                    if reduction == "mean":
                        j1, j2 = flat1.mean(), flat2.mean()
                    elif reduction == "max":
                        j1, j2 = flat1.max(), flat2.max()
                    else:
                        j1 = _attention_reduce_brute(acts1)[k]
                        j2 = _attention_reduce_brute(acts2)[k]
                    expected_j[k] = j1 * j2
                np.testing.assert_allclose(
                    joint_activation(acts1, acts2, reduction), expected_j, atol=tol
                )

            # G and its row/column max reductions
            G = np.zeros((K, K))
            for k in range(K):
                for l in range(K):
                    G[k, l] = float(np.dot(grads1[k].ravel(), grads2[l].ravel()))
            g1, g2 = gradient_interaction(grads1, grads2)
            np.testing.assert_allclose(g1, G.max(axis=1), atol=tol)
            np.testing.assert_allclose(g2, G.max(axis=0), atol=tol)

            # Eq. (2): rectified joint weights against activations
            J = joint_activation(acts1, acts2, "mean")
            expected_e = np.zeros((w, h))
            for k in range(K):
                weight = J[k] * g1[k]
                if weight > 0:
                    expected_e += weight * acts1[k]
            np.testing.assert_allclose(interaction_map(acts1, J, g1), expected_e, atol=tol)

            # Deep Similarity
            pooled2 = acts2.reshape(K, -1).mean(axis=1)
            expected_d = np.zeros((w, h))
            for k in range(K):
                expected_d += acts1[k] * pooled2[k]
            np.testing.assert_allclose(deep_similarity_map(acts1, pooled2), expected_d, atol=tol)

        elapsed = time.monotonic() - start
        assert report(1, elapsed < 10.0, f"equation oracles in {elapsed:.1f}s (< 10 s)")


def _attention_reduce_brute(acts):
    K = acts.shape[0]
    flat = acts.reshape(K, -1).astype(np.float64)
    query = flat.mean(axis=1)
    logits = np.array([float(np.dot(flat[:, n], query)) for n in range(flat.shape[1])])
    logits = logits / np.sqrt(K)
    weights = np.exp(logits - logits.max())
    weights = weights / weights.sum()
    return (flat * weights[None, :]).sum(axis=1)


class TestCriterion2GradientCorrectness:
    def test_finite_difference_match(self, toy_model):
        start = time.monotonic()
        images = generate_corpus(2, 48, seed=51)
        pair = ImagePair(images[0], images[1])

        g1, _ = toy_model.input_gradients(pair)
        double = toy_model.clone()
        double.backbone.double()
        double.projector.double()

        def score(first):
            t1 = torch.from_numpy(first.astype(np.float64)).unsqueeze(0)
            t2 = torch.from_numpy(pair.second.astype(np.float64)).unsqueeze(0)
            with torch.no_grad():
                return float(double.score_pairs_t(t1, t2)[0])

        rng = np.random.default_rng(7)
        coords = np.argwhere(np.abs(g1) > 0.2 * np.abs(g1).max())
        picks = coords[rng.choice(len(coords), size=20, replace=False)]
        # 1e-4 step: at the trained weights a 1e-3 bump can straddle ReLU
        # kinks, where central differences measure a one-sided average
        h = 1e-4
        worst = 0.0
        for c, y, x in picks:
            bumped = pair.first.astype(np.float64)
            bumped[c, y, x] += h
            up = score(bumped)
            bumped[c, y, x] -= 2 * h
            down = score(bumped)
            fd = (up - down) / (2 * h)
            rel = abs(fd - g1[c, y, x]) / max(abs(fd), 1e-8)
            worst = max(worst, rel)
        assert worst <= 1e-2

        # activation gradients: directional derivative at the trained weights
        ag = toy_model.activation_gradients(pair)
        delta = ag.grad1.astype(np.float64)
        delta /= np.linalg.norm(delta)
        import copy

        proj = copy.deepcopy(toy_model.projector).double()
        z2 = toy_model.encode(pair.second).embedding.astype(np.float64)

        def cosine_from_acts(acts):
            pooled = torch.from_numpy(acts.mean(axis=(1, 2))).unsqueeze(0)
            with torch.no_grad():
                z1 = proj(pooled)[0].numpy()
            return np.dot(z1, z2) / (np.linalg.norm(z1) * np.linalg.norm(z2))

        eps = 1e-3
        fd = (
            cosine_from_acts(ag.act1.astype(np.float64) + eps * delta)
            - cosine_from_acts(ag.act1.astype(np.float64) - eps * delta)
        ) / (2 * eps)
        analytic = float((ag.grad1.astype(np.float64) * delta).sum())
        act_rel = abs(fd - analytic) / max(abs(analytic), 1e-8)
        assert act_rel <= 1e-2

        elapsed = time.monotonic() - start
        assert report(
            2, elapsed < 60.0,
            f"input worst rel {worst:.1e}, activation rel {act_rel:.1e}, {elapsed:.0f}s (< 1 min)",
        )


class TestCriterion3Symmetry:
    def test_identical_pairs_symmetric_maps(self, toy_model):
        img = generate_corpus(1, 48, seed=52)[0]
        pair = ImagePair(img, img.copy())
        checks = {}

        expl = input_x_gradient(toy_model, pair)
        checks["input-x-grad"] = float(np.abs(expl.map1 - expl.map2).max())

        # the transform must leave the image fixed for the pair to stay
        # identical across frames: a fully gray image under grayscale
        gray = apply_transform(img, "grayscale", 1.0)
        gray_pair = ImagePair(gray, gray.copy())
        expl = averaged_transforms(toy_model, gray_pair, "grayscale")
        checks["avg-transforms"] = float(np.abs(expl.map1 - expl.map2).max())

        for name in ("grad-cam-baseline", "deep-sim"):
            ex = make_explainer(name)
            out = ex(toy_model, pair, 0)
            checks[name] = float(np.abs(out.map1 - out.map2).max())

        for reduction in ("mean", "max", "attn"):
            for gi in ("gi", "nogi"):
                name = f"int-cam/{reduction}/{gi}"
                ex = make_explainer(name)
                out = ex(toy_model, pair, 0)
                checks[name] = float(np.abs(out.map1 - out.map2).max())

        worst = max(checks.values())
        assert report(3, worst <= 1e-5, f"worst map asymmetry {worst:.2e} (tol 1e-5)")


class TestCriterion4Degenerates:
    def test_degenerate_equalities(self, toy_model):
        images = generate_corpus(2, 48, seed=53)
        pair = ImagePair(images[0], images[1])
        details = []

        avg = averaged_transforms(toy_model, pair, "gaussian_blur", scheme="direct", Z=1)
        frame = apply_transform(pair.second, "gaussian_blur", 2.0)
        plain = input_x_gradient(toy_model, ImagePair(pair.first, frame))
        diff = float(np.abs(avg.map1 - plain.map1).max())
        details.append(f"Z=1 avg vs input-x-grad {diff:.2e}")
        assert diff <= 1e-6

        sg = smooth_grad(toy_model, pair, n_samples=1, noise_sigma=0.0, seed=0)
        ixg = input_x_gradient(toy_model, pair)
        assert np.array_equal(sg.map1, ixg.map1) and np.array_equal(sg.map2, ixg.map2)
        details.append("smooth(n=1, sigma=0) == input-x-grad exactly")

        rng = np.random.default_rng(3)
        acts = rng.random((6, 4, 4)).astype(np.float32)
        unit = np.ones(6, dtype=np.float32)
        np.testing.assert_allclose(
            interaction_map(acts, unit, unit), acts.sum(axis=0), rtol=1e-6
        )
        details.append("GI-off unit-J reduces to sum of activations")

        fixed = random_maps((48, 48), seed=4)
        constant_result = max_sensitivity(
            toy_model, pair, lambda m, p: fixed, radius=0.05, n_samples=3, seed=0
        )
        assert constant_result.value == 0.0
        zero_radius = max_sensitivity(
            toy_model, pair, lambda m, p: input_x_gradient(m, p), radius=0.0, n_samples=2, seed=0
        )
        assert zero_radius.value == 0.0
        details.append("constant-explainer and radius-0 sensitivity both 0")

        assert report(4, True, "; ".join(details))


class TestCriterion5MetricContracts:
    def test_metric_contracts(self):
        stub = OverlapStubModel(factor=8)
        pair, _ = planted_patch_pair(32, seed=5)
        maps = random_maps((32, 32), seed=6)

        s = stub.pair_similarity(pair)
        si = insertion_deletion_curve(stub, pair, maps, "SI")
        b1, b2 = blur_baseline(pair.first), blur_baseline(pair.second)
        s_blur = float(stub.pair_scores(b1[None], b2[None])[0])
        endpoint_err = max(
            abs(si.curves[0].scores[0] - s_blur), abs(si.curves[0].scores[-1] - s)
        )
        assert endpoint_err <= 1e-5

        flat = insertion_deletion_curve(constant_model(), pair, maps, "SI")
        assert np.allclose(flat.curves[0].scores, flat.curves[0].scores[0], atol=1e-6)
        assert flat.auc == pytest.approx(flat.curves[0].scores[0], abs=1e-6)

        warped = ExplanationPair(
            1.0 - np.exp(-3.0 * maps.map1), 1.0 - np.exp(-3.0 * maps.map2),
            method="warped", normalization="minmax",
        )
        a = insertion_deletion_curve(stub, pair, maps, "SD")
        b = insertion_deletion_curve(stub, pair, warped, "SD")
        assert np.array_equal(a.curves[0].scores, b.curves[0].scores)

        _, details = pairwise_occlusion(
            stub, pair, OcclusionConfig(mask_size=8, stride=4, n_masks=64, seed=0),
            return_details=True,
        )
        assert abs(details.weights.sum() - 1.0) <= 1e-6

        # protocol constants at their paper values
        config = OcclusionConfig()
        assert config.mask_size == 64 and config.stride == 8
        assert config.n_masks == 100
        assert config.scale_range == (0.10, 0.30)
        rng = np.random.default_rng(7)
        big_pair = ImagePair(
            rng.random((3, 224, 224), dtype=np.float32),
            rng.random((3, 224, 224), dtype=np.float32),
        )
        big_maps = random_maps((224, 224), seed=8)
        big = insertion_deletion_curve(stub, big_pair, big_maps, "SI")
        assert len(big.curves[0].fractions) == 225  # 224 steps of L=224 plus step 0
        cond = conditional_occlusion(stub, big_pair, config)
        assert cond.options["n_windows"] == 441

        assert report(
            5, True,
            "endpoints, flat AUC, rank invariance, softmax sum, L=224/441 windows/100 masks",
        )


class TestCriterion6StubOracles:
    def test_stub_model_oracles(self):
        start = time.monotonic()
        stub = OverlapStubModel(factor=8)
        pair, mask = planted_patch_pair(32, seed=9)

        # conditional occlusion equals the brute-force per-window drops
        config = OcclusionConfig(mask_size=8, stride=4, fill="zero", seed=0)
        expl = conditional_occlusion(stub, pair, config)
        s = stub.pair_similarity(pair)
        acc = np.zeros((32, 32))
        cover = np.zeros((32, 32))
        for top in range(0, 25, 4):
            for left in range(0, 25, 4):
                perturbed = pair.first.copy()
                perturbed[:, top : top + 8, left : left + 8] = 0.0
                z1, _ = stub.embed_batch(perturbed[None])
                z2, _ = stub.embed_batch(pair.second[None])
                acc[top : top + 8, left : left + 8] += s - similarity(z1[0], z2[0])
                cover[top : top + 8, left : left + 8] += 1
        brute = acc / np.maximum(cover, 1)
        np.testing.assert_allclose(expl.map1, brute, atol=1e-6)

        # oracle-ranked insertion beats the mean of 20 random rankings
        oracle = ExplanationPair(mask, mask, method="oracle", normalization="minmax")
        oracle_auc = insertion_deletion_curve(stub, pair, oracle, "SI").auc
        rng = np.random.default_rng(10)
        random_aucs = [
            insertion_deletion_curve(
                stub, pair, random_maps((32, 32), seed=int(rng.integers(2**31))), "SI"
            ).auc
            for _ in range(20)
        ]
        assert oracle_auc > float(np.mean(random_aucs))

        # pairwise occlusion with 10k masks localizes the planted patch
        big_pair, big_mask = planted_patch_pair(64, seed=9, patch=10)
        config = OcclusionConfig(n_masks=10_000, seed=1, batch_size=512)
        pw = pairwise_occlusion(stub, big_pair, config)
        inside = float(pw.map1[big_mask == 1].mean())
        outside = float(pw.map1[big_mask == 0].mean())
        ratio = inside / max(outside, 1e-12)
        assert ratio >= 1.5

        elapsed = time.monotonic() - start
        assert report(
            6, elapsed < 300.0,
            f"brute-force exact, oracle {oracle_auc:.3f} > random {np.mean(random_aucs):.3f}, "
            f"patch ratio {ratio:.2f} (>= 1.5), {elapsed:.0f}s (< 5 min)",
        )


class TestCriterion7ToyTraining:
    def test_training_contract(self, toy_train_result):
        model, trace, seconds = toy_train_result
        expected_initial = float(np.log(2 * 64 - 1))
        initial_rel = abs(trace.initial_loss - expected_initial) / expected_initial
        halved = trace.epoch_losses[-1] <= 0.5 * trace.initial_loss
        margin = contrastive_margin(model, n_pairs=100, seed=0)["margin"]
        ok = initial_rel <= 0.15 and halved and margin >= 0.2 and seconds <= 600
        assert report(
            7, ok,
            f"initial {trace.initial_loss:.3f} vs ln(127)={expected_initial:.3f} "
            f"({initial_rel:.1%}), final {trace.epoch_losses[-1]:.3f} "
            f"(halved={halved}), margin {margin:.3f} (>= 0.2), train {seconds:.0f}s (<= 10 min)",
        )


class TestCriterion8MethodVsRandom:
    def test_methods_beat_random(self, toy_model):
        images = generate_corpus(50, 48, seed=202)
        pairs = [augment_pair(img, seed=[7, i]) for i, img in enumerate(images)]

        def mean_si(mapper):
            return float(np.mean([
                insertion_deletion_curve(toy_model, p, mapper(p, i), "SI").auc
                for i, p in enumerate(pairs)
            ]))

        random_si = mean_si(lambda p, i: random_maps(p.spatial_shape, seed=[0, i, 1]))

        ic = make_explainer("int-cam/mean/gi")
        ic_si = mean_si(lambda p, i: ic.eval_maps(ic(toy_model, p, 0)))

        # the direct per-strength scheme is the variant with a stable
        # desk-scale insertion signal (see the decisions notes)
        avg = make_explainer(
            "avg-transforms",
            ExplainOptions(transform_kind="gaussian_blur", scheme="direct"),
        )
        avg_si = mean_si(lambda p, i: avg.eval_maps(avg(toy_model, p, 0)))

        ic_gap = ic_si - random_si
        avg_gap = avg_si - random_si
        ok = ic_gap >= 0.02 and avg_gap >= 0.02
        assert report(
            8, ok,
            f"SI random {random_si:.4f}, int-cam/mean/gi +{ic_gap:.4f}, "
            f"avg-transforms +{avg_gap:.4f} (both must be >= +0.02)",
        )


class TestCriterion9SanityChecks:
    def test_sanity_checks(self, toy_model):
        images = generate_corpus(20, 48, seed=404)
        pairs = [augment_pair(img, seed=[9, i]) for i, img in enumerate(images)]

        ic = make_explainer("int-cam/mean/gi")
        trace = sanity_check(toy_model, pairs[0], lambda m, p: ic(m, p, 0), seed=11)
        depth0_ok = trace.steps[0].spearman1 == 1.0 and trace.steps[0].spearman2 == 1.0

        randomized = toy_model.randomize_layers(len(toy_model.layer_list), seed=11)
        measured = {}
        for name, opts in (
            ("int-cam/mean/gi", ExplainOptions()),
            ("avg-transforms", ExplainOptions(transform_kind="gaussian_blur", scheme="direct")),
        ):
            ex = make_explainer(name, opts)
            rhos = []
            for p in pairs:
                base = ex(toy_model, p, 0)
                rand = ex(randomized, p, 0)
                r1, _ = _spearman(base.map1, rand.map1)
                r2, _ = _spearman(base.map2, rand.map2)
                rhos += [abs(r1), abs(r2)]
            measured[name] = float(np.mean(rhos))

        ok = depth0_ok and all(v <= 0.3 for v in measured.values())
        report(
            9, ok,
            f"depth-0 exact {depth0_ok}; mean |spearman| fully randomized: "
            + ", ".join(f"{k}={v:.3f}" for k, v in measured.items())
            + " (each must be <= 0.3)",
        )
        assert depth0_ok
        assert measured["avg-transforms"] <= 0.3
        assert measured["int-cam/mean/gi"] <= 0.3, (
            "known desk-scale limitation: a fully randomized shallow CNN still "
            "yields activation-energy maps, so Interaction-CAM stays rank-"
            "correlated with the trained maps; see notes/decisions.md"
        )


class TestCriterion10Inversion:
    def test_inversion_contract(self, toy_model):
        cfg = InversionConfig()
        defaults_ok = (
            cfg.lr == 1e4 and cfg.iterations == 200 and cfg.lr_decay == 0.1
            and cfg.lr_decay_every == 50 and cfg.init_std == 0.1
            and cfg.tv_weight == 1e-8 and cfg.alpha == 6.0 and cfg.alpha_weight == 1e-7
        )

        target = generate_corpus(1, 48, seed=55)[0]
        _, trace = invert_features(toy_model, target, InversionConfig(layer_id=2, seed=0))
        ratio = trace.feature_mse[-1] / trace.feature_mse[0]

        rng = np.random.default_rng(12)
        x = torch.tensor(rng.random((1, 8, 8)), dtype=torch.float64, requires_grad=True)
        grad_ok = True
        for fn, payload in ((tv_regularizer, None), (alpha_norm, 6.0)):
            value = fn(x) if payload is None else fn(x, payload)
            (grad,) = torch.autograd.grad(value, x)
            for iy, ix in ((1, 1), (4, 6), (7, 3)):
                bump = x.detach().clone()
                h = 1e-6
                bump[0, iy, ix] += h
                up = float(fn(bump) if payload is None else fn(bump, payload))
                bump[0, iy, ix] -= 2 * h
                down = float(fn(bump) if payload is None else fn(bump, payload))
                fd = (up - down) / (2 * h)
                if abs(fd - float(grad[0, iy, ix])) > 1e-2 * max(abs(fd), 1e-8):
                    grad_ok = False

        ok = defaults_ok and ratio <= 0.10 and grad_ok
        assert report(
            10, ok,
            f"appendix defaults {defaults_ok}, feature MSE ratio {ratio:.3f} (<= 0.10), "
            f"regularizer gradients {grad_ok}",
        )


class TestCriterion11Reproducibility:
    def test_cli_reproducibility(self, toy_checkpoint, tmp_path):
        runs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            code = cli_main([
                "evaluate", "--model", str(toy_checkpoint), "--pairs", "toy",
                "--n-pairs", "3", "--methods", "grad-cam-baseline", "random",
                "--metrics", "SI", "SAD", "--out", str(out), "--seed", "21",
            ])
            assert code == 0
            runs.append(json.loads((out / "report.json").read_text()))
        agg_ok = True
        for e1, e2 in zip(runs[0]["results"], runs[1]["results"]):
            v1 = e1.get("auc", e1.get("drop"))
            v2 = e2.get("auc", e2.get("drop"))
            if v1 is None or v2 is None:
                agg_ok = agg_ok and v1 == v2
            elif abs(v1 - v2) > 1e-6:
                agg_ok = False

        blobs = []
        for tag in ("c", "d"):
            out = tmp_path / tag
            code = cli_main([
                "explain", "--model", str(toy_checkpoint), "--pairs", "toy",
                "--methods", "int-cam/mean/gi", "avg-transforms",
                "--out", str(out), "--seed", "22",
            ])
            assert code == 0
            blobs.append({
                f.name: f.read_bytes() for f in sorted(out.glob("*.xai1"))
            })
        tensors_ok = blobs[0] == blobs[1] and len(blobs[0]) == 4

        dissect = []
        for tag in ("e", "f"):
            out = tmp_path / tag
            code = cli_main([
                "dissect", "--model", str(toy_checkpoint), "--pairs", "toy",
                "--transform", "gaussian_blur", "--out", str(out), "--seed", "23",
            ])
            assert code == 0
            payload = json.loads((out / "dissect.json").read_text())
            dissect.append((payload["scores"], (out / "dissect_map1.xai1").read_bytes()))
        dissect_ok = dissect[0][0] == dissect[1][0] and dissect[0][1] == dissect[1][1]

        sanity = []
        for tag in ("g", "h"):
            out = tmp_path / tag
            code = cli_main([
                "sanity", "--model", str(toy_checkpoint), "--pairs", "toy",
                "--methods", "grad-cam-baseline", "--out", str(out), "--seed", "24",
            ])
            assert code == 0
            sanity.append(json.loads((out / "sanity.json").read_text())["methods"])
        sanity_ok = sanity[0] == sanity[1]

        ok = agg_ok and tensors_ok and dissect_ok and sanity_ok
        assert report(
            11, ok,
            f"evaluate within 1e-6 {agg_ok}, explain tensors byte-identical {tensors_ok}, "
            f"dissect {dissect_ok}, sanity {sanity_ok}",
        )
