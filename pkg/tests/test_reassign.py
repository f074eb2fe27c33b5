import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatseg.errors import EmptySceneError, ShapeError
from splatseg.masks import LabelMap
from splatseg.rasterizer import ContributionMatrix, accumulate_contributions
from splatseg.reassign import (
    PriorScores,
    SegmentationMatrix,
    compute_priors,
    object_mask,
    query_point,
    reassign_labels,
)
from splatseg.scene import Scene
from splatseg.training import LinearClassifier
from splatseg.synthetic import cluster_scene, look_at_camera, render_label_masks, ring_cameras

from conftest import identity_camera, make_random_scene
from oracles import brute_knn_mode, naive_vote_labels


def uniform_priors(n):
    return PriorScores(np.full((n, 256), 1.0 / 256.0))


class TestComputePriors:
    def test_zero_classifier_uniform(self):
        scene = make_random_scene(10, seed=1)
        clf = LinearClassifier(np.zeros((256, 16)), np.zeros(256))
        priors = compute_priors(scene, clf)
        assert np.allclose(priors.probs, 1.0 / 256.0)

    def test_rows_sum_to_one(self, rng):
        scene = make_random_scene(40, seed=2)
        clf = LinearClassifier(rng.normal(size=(256, 16)), rng.normal(size=256))
        priors = compute_priors(scene, clf)
        assert np.allclose(priors.probs.sum(axis=1), 1.0, atol=1e-5)
        assert (priors.probs >= 0.0).all()

    def test_hot_logit_wins(self):
        scene = make_random_scene(1, seed=3)
        f = scene.obj_features[0].astype(np.float64)
        weights = np.zeros((256, 16))
        weights[3] = 10.0 * f / float(f @ f)  # logit 10 at class 3, 0 elsewhere
        clf = LinearClassifier(weights, np.zeros(256))
        priors = compute_priors(scene, clf)
        assert priors.argmax_labels[0] == 3
        expected = np.exp(10.0) / (np.exp(10.0) + 255.0)
        assert priors.probs[0, 3] == pytest.approx(expected, rel=1e-6)


class TestReassignLabels:
    def test_gamma_zero_equals_pure_vote(self, rng):
        scene = make_random_scene(60, seed=5)
        cams = [identity_camera(), identity_camera(f=60.0)]
        masks = [LabelMap(rng.integers(0, 5, (64, 64)).astype(np.uint8)) for _ in cams]
        contribs = accumulate_contributions(scene, cams, masks)
        current = rng.integers(0, 5, 60)
        seg = reassign_labels(contribs, uniform_priors(60), current, gamma_p=0.0)
        want = naive_vote_labels(scene, cams, masks, current)
        assert np.array_equal(seg.labels, want)

    def test_hand_computed_prior_flip(self):
        # Votes 2.0 for label 5 vs 1.9 for label 9; the splat's current
        # label is 9 with prior confidence 0.8. gamma 0.2 adds 0.16, so
        # label 9 wins 2.06 > 2.0.
        contribs = ContributionMatrix(1)
        contribs.add(5, 0, 2.0)
        contribs.add(9, 0, 1.9)
        probs = np.zeros((1, 256))
        probs[0, 9] = 0.8
        probs[0, 5] = 0.2
        priors = PriorScores(probs)
        seg = reassign_labels(contribs, priors, [9], gamma_p=0.2)
        assert seg.labels[0] == 9
        # Without the prior the vote goes to 5.
        seg0 = reassign_labels(contribs, priors, [9], gamma_p=0.0)
        assert seg0.labels[0] == 5

    def test_negative_gamma_degrades(self):
        contribs = ContributionMatrix(1)
        contribs.add(5, 0, 2.0)
        contribs.add(9, 0, 1.9)
        probs = np.zeros((1, 256))
        probs[0, 9] = 0.8
        probs[0, 5] = 0.2
        seg = reassign_labels(contribs, PriorScores(probs), [9], gamma_p=-1.0)
        assert seg.labels[0] == 5  # 1.9 - 0.8 = 1.1 < 2.0

    def test_monotone_prior_keeps_winner(self, rng):
        scene = make_random_scene(50, seed=7)
        cam = identity_camera()
        mask = LabelMap(rng.integers(0, 6, (64, 64)).astype(np.uint8))
        contribs = accumulate_contributions(scene, [cam], [mask])
        probs = rng.dirichlet(np.ones(256), size=50)
        priors = PriorScores(probs)
        base = reassign_labels(contribs, priors, priors.argmax_labels, 0.0)
        already_winning = base.labels == priors.argmax_labels
        for gamma in (0.0, 0.2, 1.0):
            seg = reassign_labels(contribs, priors, priors.argmax_labels, gamma)
            assert np.array_equal(
                seg.labels[already_winning], base.labels[already_winning]
            ), f"gamma={gamma} flipped a winning label"

    def test_unrendered_keep_current_label(self):
        contribs = ContributionMatrix(3)
        contribs.add(2, 0, 1.0)  # splat 0 rendered; splats 1, 2 never did
        priors = uniform_priors(3)
        seg = reassign_labels(contribs, priors, [7, 9, 11], gamma_p=0.0)
        assert seg.labels.tolist() == [2, 9, 11]

    def test_tie_goes_to_smaller_label(self):
        contribs = ContributionMatrix(1)
        contribs.add(4, 0, 1.5)
        contribs.add(11, 0, 1.5)
        seg = reassign_labels(contribs, uniform_priors(1), [4], gamma_p=0.0)
        assert seg.labels[0] == 4

    def test_shape_mismatch(self):
        contribs = ContributionMatrix(2)
        with pytest.raises(ShapeError):
            reassign_labels(contribs, uniform_priors(3), [0, 0], 0.0)


class TestSegmentationMatrix:
    def test_columns_one_hot(self, rng):
        labels = rng.integers(0, 20, 30)
        seg = SegmentationMatrix.from_labels(labels)
        m = seg.matrix()
        assert m.shape == (256, 30)
        assert (m.sum(axis=0) == 1).all()
        assert np.array_equal(np.argmax(m, axis=0), labels)


class TestQueryPoint:
    def test_k1_nearest(self):
        scene = make_random_scene(20, seed=9)
        seg = SegmentationMatrix.from_labels(np.arange(20) % 7)
        i = 13
        point = scene.positions[i] + 1e-4
        assert query_point(scene, seg, point, k=1) == seg.labels[i]

    def test_majority(self):
        positions = np.array(
            [[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [1.5, 0, 0], [0, 1.5, 0]], dtype=float
        )
        scene = make_random_scene(5, seed=10)
        scene.positions[:] = positions
        seg = SegmentationMatrix.from_labels([2, 2, 2, 7, 7])
        assert query_point(scene, seg, (0.02, 0.02, 0.0), k=5) == 2

    def test_mode_tie_smaller_label(self):
        positions = np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]], dtype=float)
        scene = make_random_scene(4, seed=11)
        scene.positions[:] = positions
        seg = SegmentationMatrix.from_labels([7, 2, 7, 2])
        assert query_point(scene, seg, (0.0, 0.0, 0.0), k=4) == 2

    def test_empty_scene(self):
        seg = SegmentationMatrix.from_labels([])
        with pytest.raises(EmptySceneError):
            query_point(Scene.empty(0), seg, (0, 0, 0), k=1)

    def test_matches_brute_force(self, rng):
        scene = make_random_scene(100, seed=12)
        labels = rng.integers(0, 9, 100)
        seg = SegmentationMatrix.from_labels(labels)
        for _ in range(20):
            p = rng.uniform(-2, 2, 3) + np.array([0.0, 0.0, 4.0])
            k = int(rng.integers(1, 30))
            assert query_point(scene, seg, p, k) == brute_knn_mode(
                scene.positions.astype(np.float64), labels, p, k
            )

    def test_rigid_transform_invariance(self, rng):
        scene = make_random_scene(80, seed=13)
        labels = rng.integers(0, 6, 80)
        seg = SegmentationMatrix.from_labels(labels)
        # A rigid transform: rotation about a random axis plus translation.
        from splatseg.scene import quat_to_rotmat

        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        rot = quat_to_rotmat(q)
        shift = rng.uniform(-5, 5, 3)
        moved = scene.copy()
        moved.positions = (scene.positions.astype(np.float64) @ rot.T + shift).astype(
            np.float32
        )
        moved = Scene(moved.positions, moved.scales, moved.rotations, moved.opacities,
                      moved.sh_coeffs, moved.obj_features, moved.labels, moved.sh_degree)
        for _ in range(10):
            p = rng.uniform(-2, 2, 3) + np.array([0.0, 0.0, 4.0])
            a = query_point(scene, seg, p, k=9)
            b = query_point(moved, seg, rot @ p + shift, k=9)
            assert a == b


class TestObjectMask:
    def test_absent_object_empty(self):
        seg = SegmentationMatrix.from_labels([1, 2, 3])
        assert not object_mask(seg, 9).any()

    def test_partition(self, rng):
        labels = rng.integers(0, 12, 50)
        seg = SegmentationMatrix.from_labels(labels)
        total = sum(object_mask(seg, k).sum() for k in range(256))
        assert total == 50

    def test_cluster_ground_truth(self):
        truth = cluster_scene(n_per_cluster=40, seed=1)
        seg = SegmentationMatrix.from_labels(truth.labels)
        for label in (1, 2, 3):
            mask = object_mask(seg, label)
            assert mask.sum() == 40
            assert np.array_equal(mask, truth.labels == label)

    def test_invalid_id(self):
        seg = SegmentationMatrix.from_labels([0])
        with pytest.raises(ValueError):
            object_mask(seg, 300)


class TestEndToEndReassignment:
    def test_cluster_scene_recovered(self):
        truth = cluster_scene(n_per_cluster=60, seed=4)
        cams = ring_cameras(6)
        masks = render_label_masks(truth, cams)
        # Features are untrained here; give the voter flat priors.
        contribs = accumulate_contributions(truth, cams, masks)
        seg = reassign_labels(
            contribs, uniform_priors(len(truth)), truth.labels, gamma_p=0.0
        )
        accuracy = float(np.mean(seg.labels == truth.labels))
        assert accuracy >= 0.95
