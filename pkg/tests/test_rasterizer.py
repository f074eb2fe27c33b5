import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatseg.errors import ShapeError
from splatseg.masks import LabelMap
from splatseg.rasterizer import (
    ALPHA_CLAMP,
    COV2D_DILATION,
    Splat2D,
    accumulate_contributions,
    backward_features,
    build_tile_lists,
    pixel_contributions,
    project_gaussian,
    render,
    view_weight_matrix,
)
from splatseg.scene import Scene, logit
from splatseg.synthetic import cluster_scene, ring_cameras

from conftest import identity_camera, make_random_scene
from oracles import naive_contributions, naive_render


def single_splat_scene(position=(0.0, 0.0, 3.0), sigma=0.2, opacity=0.9, color=None,
                       feature=None, label=5):
    n = 1
    sh = np.zeros((n, 3, 1))
    if color is not None:
        from splatseg.scene import rgb_to_sh_dc

        sh[0, :, 0] = rgb_to_sh_dc(color)
    feats = np.zeros((n, 16))
    if feature is not None:
        feats[0] = feature
    return Scene(
        positions=np.array([position]),
        scales=np.full((n, 3), np.log(sigma)),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        opacities=np.array([logit(opacity)]),
        sh_coeffs=sh,
        obj_features=feats,
        labels=np.array([label], dtype=np.uint8),
        sh_degree=0,
    )


class TestProjectGaussian:
    def test_isotropic_on_axis_cov2d(self):
        f, depth = 80.0, 1.0
        cam = identity_camera(f=f)
        scene = single_splat_scene(position=(0.0, 0.0, depth), sigma=0.15)
        sigma = np.exp(float(scene.scales[0, 0]))  # as stored, float32 precision
        splat = project_gaussian(cam, scene.gaussian(0))
        expected = (f * sigma / depth) ** 2
        want = np.diag([expected + COV2D_DILATION] * 2)
        assert np.allclose(splat.cov2d, want, rtol=1e-9, atol=1e-9)
        assert np.allclose(splat.mean2d, (cam.cx, cam.cy))
        assert splat.depth == pytest.approx(depth)

    def test_behind_camera_culled(self):
        cam = identity_camera()
        scene = single_splat_scene(position=(0.0, 0.0, -1.0))
        assert project_gaussian(cam, scene.gaussian(0)) is None

    def test_far_off_screen_culled(self):
        cam = identity_camera()
        scene = single_splat_scene(position=(50.0, 0.0, 3.0), sigma=0.05)
        assert project_gaussian(cam, scene.gaussian(0)) is None

    def test_isotropy_invariant_to_rotation(self, rng):
        cam = identity_camera()
        base = single_splat_scene(sigma=0.1)
        ref = project_gaussian(cam, base.gaussian(0))
        for _ in range(5):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            rotated = base.copy()
            rotated.rotations[0] = q
            got = project_gaussian(cam, rotated.gaussian(0))
            assert np.allclose(got.cov2d, ref.cov2d, atol=1e-6)


class TestTileLists:
    def test_small_splat_single_tile(self):
        splat = Splat2D(np.array([24.0, 24.0]), np.eye(2), depth=1.0, gaussian_index=0)
        assert splat.radius < 8
        bins = build_tile_lists([splat], 64, 64)
        assert list(bins.bins) == [(1, 1)]

    def test_box_spanning_four_tiles(self):
        cov = np.eye(2) * (6.0 / 3.0) ** 2  # radius 6
        splat = Splat2D(np.array([32.0, 32.0]), cov, depth=1.0, gaussian_index=0)
        bins = build_tile_lists([splat], 64, 64)
        assert sorted(bins.bins) == [(1, 1), (1, 2), (2, 1), (2, 2)]

    def test_equal_depth_ordered_by_index(self):
        cov = np.eye(2)
        a = Splat2D(np.array([8.0, 8.0]), cov, depth=2.0, gaussian_index=7)
        b = Splat2D(np.array([9.0, 8.0]), cov, depth=2.0, gaussian_index=3)
        bins = build_tile_lists([a, b], 64, 64)
        order = bins.bins[(0, 0)]
        assert [([a, b][i]).gaussian_index for i in order] == [3, 7]

    def test_depth_sorted(self):
        cov = np.eye(2)
        a = Splat2D(np.array([8.0, 8.0]), cov, depth=5.0, gaussian_index=0)
        b = Splat2D(np.array([9.0, 8.0]), cov, depth=1.0, gaussian_index=1)
        bins = build_tile_lists([a, b], 64, 64)
        assert bins.bins[(0, 0)] == [1, 0]


class TestRenderBasics:
    def test_single_splat_clamped_alpha(self):
        # Opacity ~1 at the splat center: the 0.99 clamp applies, so the
        # pixel is 0.99 * color and 0.99 * feature.
        color = (0.8, 0.3, 0.1)
        feature = np.arange(16, dtype=float) / 16.0
        scene = single_splat_scene(opacity=0.9999999, sigma=0.5, color=color, feature=feature)
        cam = identity_camera()
        fb = render(scene, cam, color=True, feature=True)
        cy, cx = 32, 32
        assert fb.alpha_acc[cy, cx] == pytest.approx(ALPHA_CLAMP, abs=1e-6)
        assert np.allclose(fb.color[cy, cx], np.array(color) * ALPHA_CLAMP, atol=1e-6)
        assert np.allclose(fb.feature[cy, cx], feature * ALPHA_CLAMP, atol=1e-6)

    def test_two_coincident_splats_closed_form(self):
        # Front alpha 0.5 with color c1, back alpha 0.5 with color c2:
        # the blend is 0.5 c1 + 0.25 c2.
        c1, c2 = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
        front = single_splat_scene(position=(0, 0, 2.0), sigma=40.0, opacity=0.5, color=c1)
        back = single_splat_scene(position=(0, 0, 4.0), sigma=40.0, opacity=0.5, color=c2)
        scene = Scene(
            np.concatenate([front.positions, back.positions]),
            np.concatenate([front.scales, back.scales]),
            np.concatenate([front.rotations, back.rotations]),
            np.concatenate([front.opacities, back.opacities]),
            np.concatenate([front.sh_coeffs, back.sh_coeffs]),
            np.concatenate([front.obj_features, back.obj_features]),
            np.concatenate([front.labels, back.labels]),
            0,
        )
        cam = identity_camera()
        fb = render(scene, cam)
        center = fb.color[32, 32]
        # Huge sigma makes alpha essentially exactly the opacity at the center.
        assert np.allclose(center, (0.5, 0.25, 0.0), atol=1e-3)

    def test_empty_scene(self):
        cam = identity_camera()
        fb = render(Scene.empty(0), cam, color=True, feature=True, label=True)
        assert fb.alpha_acc.shape == (64, 64)
        assert not fb.alpha_acc.any()
        assert not fb.color.any()
        assert not fb.label.labels.any()

    def test_alpha_monotonicity_and_bound(self):
        scene = make_random_scene(400, seed=21)
        cam = identity_camera()
        fb = render(scene, cam)
        assert fb.alpha_acc.max() <= 1.0 + 1e-5
        assert fb.alpha_acc.min() >= 0.0

    def test_label_background_rule(self):
        scene = single_splat_scene(opacity=0.3, sigma=0.3, label=9)
        cam = identity_camera()
        fb = render(scene, cam, color=False, label=True)
        # Peak alpha 0.3 < 0.5 everywhere: the whole map is background.
        assert not fb.label.labels.any()

    def test_label_tie_goes_to_smaller(self):
        # Two coincident splats with equal weight and different labels.
        a = single_splat_scene(position=(0, 0, 2.0), sigma=40.0, opacity=0.8, label=7)
        b = single_splat_scene(position=(0, 0, 2.0), sigma=40.0, opacity=0.8, label=7)
        scene = Scene(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.scales, b.scales]),
            np.concatenate([a.rotations, b.rotations]),
            np.concatenate([a.opacities, b.opacities]),
            np.concatenate([a.sh_coeffs, b.sh_coeffs]),
            np.concatenate([a.obj_features, b.obj_features]),
            np.array([4, 2], dtype=np.uint8),
            0,
        )
        cam = identity_camera()
        fb = render(scene, cam, color=False, label=True)
        # Front splat (index 0, label 4) carries more mass: 0.8 vs 0.16.
        assert fb.label.labels[32, 32] == 4

    def test_feature_linearity(self, rng):
        scene = make_random_scene(60, seed=23)
        cam = identity_camera()
        f = rng.normal(size=scene.obj_features.shape)
        g = rng.normal(size=scene.obj_features.shape)
        a, b = 1.7, -0.6

        def feat_img(feats):
            s = scene.copy()
            s.obj_features = feats.astype(np.float32)
            s = Scene(s.positions, s.scales, s.rotations, s.opacities, s.sh_coeffs,
                      s.obj_features, s.labels, s.sh_degree)
            return render(s, cam, color=False, feature=True).feature

        combined = feat_img(a * f + b * g)
        separate = a * feat_img(f) + b * feat_img(g)
        assert np.allclose(combined, separate, atol=1e-5)


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_naive_renderer(self, seed):
        scene = make_random_scene(350, seed=seed)
        cam = identity_camera()
        fb = render(scene, cam, color=True, feature=True, label=True)
        ref = naive_render(scene, cam, with_label=True)
        assert np.max(np.abs(fb.color - ref["color"])) < 1e-5
        assert np.max(np.abs(fb.feature - ref["feature"])) < 1e-5
        assert np.max(np.abs(fb.alpha_acc - ref["alpha"])) < 1e-5
        assert np.array_equal(fb.label.labels, ref["label"])

    def test_sparse_weights_reproduce_render(self):
        scene = make_random_scene(120, seed=9)
        cam = identity_camera()
        fb = render(scene, cam, color=False, feature=True)
        w = view_weight_matrix(scene, cam)
        via_matrix = (w @ scene.obj_features.astype(np.float64)).reshape(64, 64, 16)
        assert np.allclose(via_matrix, fb.feature, atol=1e-12)


class TestBackwardFeatures:
    def test_zero_cotangent(self):
        scene = make_random_scene(30, seed=31)
        cam = identity_camera()
        grads = backward_features(scene, cam, np.zeros((64, 64, 16)))
        assert not grads.any()

    def test_single_splat_linearity(self):
        scene = single_splat_scene(sigma=0.3, opacity=0.7)
        cam = identity_camera()
        g = np.full((64, 64, 16), 0.5)
        fb = render(scene, cam, color=False, feature=True)
        total_weight = fb.alpha_acc.sum()
        grads = backward_features(scene, cam, g)
        assert np.allclose(grads[0], total_weight * 0.5, rtol=1e-9)

    def test_matches_finite_differences(self, rng):
        scene = make_random_scene(25, seed=33, degree=0)
        cam = identity_camera(width=32, height=32, f=36.0)
        g = rng.normal(size=(32, 32, 16))
        analytic = backward_features(scene, cam, g)

        def loss(feats):
            s = Scene(scene.positions, scene.scales, scene.rotations, scene.opacities,
                      scene.sh_coeffs, feats, scene.labels, scene.sh_degree)
            return float(np.sum(render(s, cam, color=False, feature=True).feature * g))

        h = 1e-3
        errs = []
        for i in rng.choice(len(scene), 6, replace=False):
            for k in rng.choice(16, 2, replace=False):
                fp = scene.obj_features.astype(np.float64).copy()
                fm = fp.copy()
                fp[i, k] += h
                fm[i, k] -= h
                fd = (loss(fp) - loss(fm)) / (2 * h)
                denom = max(abs(fd), abs(analytic[i, k]), 1e-9)
                errs.append(abs(fd - analytic[i, k]) / denom)
        assert np.quantile(errs, 0.95) < 1e-3

    def test_shape_mismatch(self):
        scene = make_random_scene(5, seed=1)
        cam = identity_camera()
        with pytest.raises(ShapeError):
            backward_features(scene, cam, np.zeros((10, 10, 16)))


class TestContributions:
    def test_single_label_reduction(self):
        scene = single_splat_scene(sigma=0.3, opacity=0.8)
        cam = identity_camera()
        mask = LabelMap(np.full((64, 64), 5, dtype=np.uint8))
        contribs = accumulate_contributions(scene, [cam], [mask])
        assert contribs.labels() == [5]
        fb = render(scene, cam, color=False)
        assert contribs.get(5, 0) == pytest.approx(fb.alpha_acc.sum(), rel=1e-12)

    def test_label_permutation(self):
        scene = make_random_scene(40, seed=41)
        cam = identity_camera()
        zeros = LabelMap(np.zeros((64, 64), dtype=np.uint8))
        sevens = LabelMap(np.full((64, 64), 7, dtype=np.uint8))
        c0 = accumulate_contributions(scene, [cam], [zeros])
        c7 = accumulate_contributions(scene, [cam], [sevens])
        assert np.allclose(c0.row(0), c7.row(7))
        assert not c7.row(0).any()

    def test_matches_naive_per_pixel_oracle(self, rng):
        scene = make_random_scene(3, seed=43)
        cams = [identity_camera(width=24, height=24, f=26.0),
                identity_camera(width=24, height=24, f=30.0)]
        masks = [LabelMap(rng.integers(0, 4, (24, 24)).astype(np.uint8)) for _ in cams]
        contribs = accumulate_contributions(scene, cams, masks)
        ref = naive_contributions(scene, cams, masks)
        dense = contribs.stacked(range(256))
        assert np.allclose(dense, ref, atol=1e-9)

    def test_mass_partition(self, rng):
        scene = make_random_scene(50, seed=47)
        cams = [identity_camera(), identity_camera(f=60.0)]
        masks = [LabelMap(rng.integers(0, 6, (64, 64)).astype(np.uint8)) for _ in cams]
        contribs = accumulate_contributions(scene, cams, masks)
        total = contribs.total_mass()
        blended = np.zeros(len(scene))
        for cam in cams:
            w = view_weight_matrix(scene, cam)
            blended += np.asarray(w.sum(axis=0)).ravel()
        assert np.allclose(total, blended, atol=1e-5)

    def test_dimension_mismatch_names_view(self):
        scene = make_random_scene(5, seed=2)
        cam = identity_camera()
        good = LabelMap(np.zeros((64, 64), dtype=np.uint8))
        bad = LabelMap(np.zeros((32, 32), dtype=np.uint8))
        with pytest.raises(ShapeError, match="view 1"):
            accumulate_contributions(scene, [cam, cam], [good, bad])

    def test_entries_non_negative(self, rng):
        scene = make_random_scene(30, seed=53)
        cam = identity_camera()
        mask = LabelMap(rng.integers(0, 3, (64, 64)).astype(np.uint8))
        contribs = accumulate_contributions(scene, [cam], [mask])
        assert all((contribs.row(l) >= 0).all() for l in contribs.labels())


class TestPixelContributions:
    def test_single_splat(self):
        scene = single_splat_scene(sigma=0.4, opacity=0.8)
        cam = identity_camera()
        idx, w = pixel_contributions(scene, cam, (32, 32))
        assert idx.tolist() == [0]
        fb = render(scene, cam, color=False)
        assert w[0] == pytest.approx(fb.alpha_acc[32, 32], rel=1e-12)

    def test_empty_pixel(self):
        scene = single_splat_scene(sigma=0.05, opacity=0.8)
        cam = identity_camera()
        idx, w = pixel_contributions(scene, cam, (2, 2))
        assert len(idx) == 0 and len(w) == 0

    def test_matches_render_weights(self):
        scene = make_random_scene(80, seed=59)
        cam = identity_camera()
        wmat = view_weight_matrix(scene, cam)
        for pixel in ((32, 32), (10, 50), (63, 0)):
            idx, w = pixel_contributions(scene, cam, pixel)
            row = wmat.getrow(pixel[1] * 64 + pixel[0]).toarray().ravel()
            dense = np.zeros(len(scene))
            dense[idx] = w
            assert np.allclose(dense, row, atol=1e-12)


@given(st.integers(min_value=0, max_value=10_000))
def test_alpha_bound_property(seed):
    scene = make_random_scene(25, seed=seed)
    cam = identity_camera(width=32, height=32, f=36.0)
    fb = render(scene, cam, color=False)
    assert fb.alpha_acc.max() <= 1.0 + 1e-5


def test_transmittance_non_increasing():
    from splatseg.rasterizer import _TileWalk, _project_scene

    scene = make_random_scene(80, seed=61)
    cam = identity_camera()
    proj = _project_scene(scene, cam)
    px = np.arange(16, 32, dtype=float)
    py = np.full(16, 32.0)
    walk = _TileWalk(proj, list(range(len(proj))), px, py)
    last_t = walk.transmittance.copy()
    for _, _ in walk.walk():
        assert (walk.transmittance <= last_t + 1e-12).all()
        last_t = walk.transmittance.copy()
