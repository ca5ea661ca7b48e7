import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpnhar.exceptions import (
    BoxOutOfBounds,
    DegenerateBox,
    DimensionMismatch,
    InsufficientData,
    TooFewFrames,
)
from dpnhar.features import (
    BoundingBox,
    FeatureSequence,
    RoiFeatureExtractor,
    RoiKind,
    detect_body_box,
    extract_component_features,
    extract_sequence_features,
    features_from_csv,
    features_to_csv,
    foreground_mask,
    partition_rois,
)
from dpnhar.pca import FusedPCA, pca_fit, pca_project, pca_unproject
from dpnhar.scene import ActivityClass, FrameSequence, SceneConfig, synth_sequence

from oracles import largest_component_box


def check_component_invariants(vec):
    assert vec.shape == (8,)
    assert np.all(np.isfinite(vec))
    assert np.all((vec[:6] >= 0) & (vec[:6] <= 1))
    assert np.all((vec[6:] >= -0.5) & (vec[6:] <= 0.5))
    if vec[5] == 0:
        assert vec[6] == 0 and vec[7] == 0


class TestForegroundMask:
    def test_identical_frames(self):
        f = np.full((10, 12), 77, dtype=np.uint8)
        assert not foreground_mask(f, f).any()

    def test_full_change(self):
        assert foreground_mask(np.zeros((5, 5), np.uint8), np.full((5, 5), 255, np.uint8), 10).all()

    def test_threshold_boundary(self):
        prev = np.zeros((4, 4), np.uint8)
        cur = prev.copy()
        cur[1, 1] = 11
        cur[2, 2] = 12
        mask = foreground_mask(prev, cur, 12)
        assert not mask[1, 1] and mask[2, 2]
        assert mask.sum() == 1

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            foreground_mask(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.uint8, (9, 11)),
        arrays(np.uint8, (9, 11)),
        st.integers(1, 255),
    )
    def test_symmetric(self, a, b, thr):
        assert np.array_equal(foreground_mask(a, b, thr), foreground_mask(b, a, thr))


class TestDetectBodyBox:
    def test_empty(self):
        assert detect_body_box(np.zeros((8, 8), bool), 1) is None

    def test_single_pixel_tie(self):
        mask = np.zeros((10, 10), bool)
        mask[3, 2] = True
        mask[7, 5] = True
        assert detect_body_box(mask, 1).as_tuple() == (2, 3, 2, 3)

    def test_solid_blob(self):
        mask = np.zeros((20, 30), bool)
        mask[10:14, 20:25] = True
        assert detect_body_box(mask, 1).as_tuple() == (20, 10, 24, 13)

    def test_min_area(self):
        mask = np.zeros((20, 30), bool)
        mask[0:2, 0:2] = True
        assert detect_body_box(mask, 5) is None
        assert detect_body_box(mask, 4) is not None

    def test_diagonal_is_connected(self):
        mask = np.eye(6, dtype=bool)
        assert detect_body_box(mask, 6).as_tuple() == (0, 0, 5, 5)

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14))), st.integers(1, 6))
    def test_matches_flood_fill_and_is_tight(self, mask, min_area):
        box = detect_body_box(mask, min_area)
        expected, pixels = largest_component_box(mask, min_area)
        if expected is None:
            assert box is None
            return
        assert box.as_tuple() == expected
        ys = np.array([p[0] for p in pixels])
        xs = np.array([p[1] for p in pixels])
        # shrinking any edge drops at least one pixel of the chosen component
        assert (xs == box.x_min).any() and (xs == box.x_max).any()
        assert (ys == box.y_min).any() and (ys == box.y_max).any()


class TestPartition:
    def test_hundred_square(self):
        rois = partition_rois(BoundingBox(0, 0, 99, 99))
        assert rois[RoiKind.FACE].as_tuple() == (0, 0, 99, 14)
        assert rois[RoiKind.LEG].as_tuple() == (0, 55, 99, 99)
        assert rois[RoiKind.BODY].as_tuple() == (20, 15, 79, 54)
        assert rois[RoiKind.HAND].as_tuple() == (0, 15, 99, 59)

    def test_minimum_height(self):
        rois = partition_rois(BoundingBox(3, 5, 6, 8))
        face, hand, body, leg = (rois[k] for k in RoiKind)
        for r in rois.values():
            assert r.height >= 1 and r.width >= 1
        assert face.y_min == 5 and face.y_max < body.y_min
        assert body.y_max < leg.y_min and leg.y_max == 8
        assert face.height + body.height + leg.height == 4

    @pytest.mark.parametrize("box", [BoundingBox(0, 0, 2, 10), BoundingBox(0, 0, 10, 2)])
    def test_degenerate(self, box):
        with pytest.raises(DegenerateBox):
            partition_rois(box)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 50), st.integers(0, 50), st.integers(4, 300), st.integers(4, 300))
    def test_bands_cover_and_nest(self, x0, y0, w, h):
        body = BoundingBox(x0, y0, x0 + w - 1, y0 + h - 1)
        rois = partition_rois(body)
        face, hand, torso, leg = (rois[k] for k in RoiKind)
        for r in rois.values():
            assert body.x_min <= r.x_min <= r.x_max <= body.x_max
            assert body.y_min <= r.y_min <= r.y_max <= body.y_max
        assert (face.x_min, face.x_max) == (body.x_min, body.x_max)
        assert (leg.x_min, leg.x_max) == (body.x_min, body.x_max)
        assert face.y_max + 1 == torso.y_min == hand.y_min
        assert torso.y_max + 1 == leg.y_min
        assert hand.y_max >= torso.y_max


class TestComponentFeatures:
    def test_full_symmetric(self):
        prev = np.zeros((10, 10), np.uint8)
        cur = prev.copy()
        cur[2:6, 2:6] = 200
        mask = foreground_mask(prev, cur)
        f = extract_component_features(prev, cur, BoundingBox(2, 2, 5, 5), mask)
        assert f[5] == 1.0 and f[6] == 0.0 and f[7] == 0.0
        assert f[4] == pytest.approx(200 / 255)
        np.testing.assert_allclose(f[:4], [0.2, 0.2, 0.5, 0.5])

    def test_no_change(self):
        f = np.full((6, 6), 40, np.uint8)
        out = extract_component_features(f, f, BoundingBox(1, 1, 4, 4), np.zeros((6, 6), bool))
        assert out[4] == 0 and out[5] == 0 and out[6] == 0 and out[7] == 0

    def test_two_left_pixels(self):
        # 2x2 box, left column set: centroid at local x=0.5 of extent 2 -> 0.25 - 0.5
        prev = np.zeros((4, 4), np.uint8)
        cur = prev.copy()
        cur[1:3, 1] = 100
        mask = foreground_mask(prev, cur)
        f = extract_component_features(prev, cur, BoundingBox(1, 1, 2, 2), mask)
        assert f[5] == 0.5
        assert f[6] == pytest.approx(-0.25)
        assert f[7] == pytest.approx(0.0)

    def test_out_of_bounds(self):
        f = np.zeros((6, 6), np.uint8)
        with pytest.raises(BoxOutOfBounds):
            extract_component_features(f, f, BoundingBox(0, 0, 6, 3), np.zeros((6, 6), bool))

    def test_subthreshold_change_with_empty_mask(self):
        # mean_change averages every pixel in the box, including sub-threshold ones
        prev = np.zeros((6, 6), np.uint8)
        cur = np.full((6, 6), 5, np.uint8)
        f = extract_component_features(prev, cur, BoundingBox(0, 0, 5, 5), foreground_mask(prev, cur, 12))
        assert f[5] == 0 and f[6] == 0 and f[7] == 0
        assert 0 < f[4] < 12 / 255

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.uint8, (12, 16)),
        arrays(np.uint8, (12, 16)),
        st.integers(1, 255),
        st.integers(0, 15), st.integers(0, 11), st.integers(0, 15), st.integers(0, 11),
    )
    def test_ranges(self, prev, cur, thr, xa, ya, xb, yb):
        box = BoundingBox(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))
        check_component_invariants(extract_component_features(prev, cur, box, foreground_mask(prev, cur, thr)))


class TestSequenceFeatures:
    def test_static_scene(self):
        frames, _ = synth_sequence(SceneConfig(activity=ActivityClass.NEUTRAL_STAND, seed=1))
        seq = extract_sequence_features(frames)
        for roi in RoiKind:
            assert not seq.block(roi)[:, 4:6].any()

    def test_step_count(self):
        frames, _ = synth_sequence(SceneConfig(activity=ActivityClass.WALK, n_frames=9))
        assert extract_sequence_features(frames).n_steps == 8

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            extract_sequence_features(np.zeros((1, 40, 40), np.uint8))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_walk_legs_vary_more_than_face(self, seed):
        frames, _ = synth_sequence(SceneConfig(activity=ActivityClass.WALK, seed=seed))
        seq = extract_sequence_features(frames)
        assert seq.block(RoiKind.LEG)[:, 5].var() > seq.block(RoiKind.FACE)[:, 5].var()

    def test_missed_detection_carries_box(self):
        raw = np.zeros((4, 40, 40), np.uint8)
        raw[1, 10:20, 5:15] = 200   # step 0 sees a blob
        raw[2] = raw[1]             # step 1 sees nothing
        seq = extract_sequence_features(FrameSequence(raw))
        np.testing.assert_array_equal(seq.values[1, :4], seq.values[0, :4])
        assert seq.values[1, 5] == 0
        # step 2: the blob disappears, so it is detected again at the same place
        np.testing.assert_array_equal(seq.values[2, :4], seq.values[0, :4])

    def test_first_step_without_detection_uses_full_frame(self):
        raw = np.zeros((2, 30, 50), np.uint8)
        seq = extract_sequence_features(FrameSequence(raw))
        np.testing.assert_allclose(seq.block(RoiKind.FACE)[0, :2], [0, 0])
        np.testing.assert_allclose(seq.block(RoiKind.LEG)[0, 2:4], [49 / 50, 29 / 30])

    def test_fingerprint_and_extractor(self):
        frames, _ = synth_sequence(SceneConfig(activity=ActivityClass.SIT, n_frames=6))
        ext = RoiFeatureExtractor(threshold=20, min_area=10).fit()
        (seq,) = ext.transform([frames])
        assert seq.fingerprint == ext.fingerprint == "roi8/threshold=20/min_area=10"
        assert ext.get_params() == {"threshold": 20, "min_area": 10}

    def test_csv_round_trip(self):
        frames, _ = synth_sequence(SceneConfig(activity=ActivityClass.LIFT, n_frames=7))
        seq = extract_sequence_features(frames)
        text = features_to_csv(seq)
        lines = text.splitlines()
        assert lines[0] == "step,roi,f0,f1,f2,f3,f4,f5,f6,f7"
        assert lines[1].startswith("0,face,") and lines[2].startswith("0,hand,")
        assert len(lines) == 1 + 4 * seq.n_steps
        np.testing.assert_allclose(features_from_csv(text).values, seq.values, rtol=1e-8, atol=1e-12)

    def test_feature_sequence_shape(self):
        with pytest.raises(DimensionMismatch):
            FeatureSequence(np.zeros((3, 31)))


class TestPca:
    def test_rank_one_line(self):
        t = np.linspace(-3, 5, 40)
        data = np.zeros((40, 32))
        data[:, 0] = t
        data[:, 1] = 2 * t
        model = pca_fit(data, 0.99)
        assert model.n_components == 1
        expected = np.zeros(32)
        expected[:2] = np.array([1, 2]) / np.sqrt(5)
        np.testing.assert_allclose(model.basis[0], expected, atol=1e-12)
        assert model.explained[0] == pytest.approx(1.0)

    def test_isotropic_plane_against_direct_eigensolve(self):
        rng = np.random.default_rng(12)
        data = np.zeros((1000, 32))
        data[:, 1:3] = rng.normal(size=(1000, 2))
        model = pca_fit(data, 0.95)
        assert model.n_components == 2
        # oracle: general eigen-solver on np.cov
        w, v = np.linalg.eig(np.cov(data, rowvar=False))
        w = np.real(w)
        order = np.argsort(w)[::-1][:2]
        np.testing.assert_allclose(model.explained, w[order] / w.sum(), rtol=1e-9)
        # same subspace: projectors agree
        oracle = np.real(v[:, order])
        np.testing.assert_allclose(model.basis.T @ model.basis, oracle @ oracle.T, atol=1e-9)

    def test_full_reconstruction(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(60, 32))
        model = pca_fit(data, 1.0)
        assert model.n_components == 32
        np.testing.assert_allclose(pca_unproject(model, pca_project(model, data)), data, atol=1e-9)

    def test_mean_projects_to_zero(self):
        data = np.random.default_rng(4).normal(size=(20, 32))
        model = pca_fit(data)
        np.testing.assert_allclose(pca_project(model, model.mean), 0, atol=1e-12)

    def test_constant_data(self):
        model = pca_fit(np.ones((5, 32)))
        assert model.n_components == 0
        assert pca_project(model, np.ones(32)).shape == (0,)

    def test_errors(self):
        with pytest.raises(InsufficientData):
            pca_fit(np.ones((1, 32)))
        model = pca_fit(np.random.default_rng(0).normal(size=(10, 32)))
        with pytest.raises(DimensionMismatch):
            pca_project(model, np.zeros(31))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.5, 1.0))
    def test_properties(self, seed, shift, target):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(30, 32)) * rng.uniform(0.1, 3, size=32)
        model = pca_fit(data, target)
        B = model.basis
        np.testing.assert_allclose(B @ B.T, np.eye(model.n_components), atol=1e-9)
        assert np.all(np.diff(model.explained) <= 1e-15)
        assert model.explained.sum() <= 1 + 1e-12
        v = rng.normal(size=32)
        assert np.linalg.norm(pca_project(model, v)) <= np.linalg.norm(v - model.mean) + 1e-9
        shifted = pca_fit(data + shift, target)
        assert shifted.n_components == model.n_components
        np.testing.assert_allclose(shifted.basis, model.basis, atol=1e-7)
        np.testing.assert_allclose(shifted.mean, model.mean + shift, atol=1e-9)

    def test_estimator(self):
        rng = np.random.default_rng(5)
        seqs = [rng.normal(size=(6, 32)) for _ in range(10)]
        pca = FusedPCA(variance_target=1.0).fit(seqs)
        Z = pca.transform(seqs)
        assert Z.shape == (60, 32)
        np.testing.assert_allclose(pca.inverse_transform(Z), np.concatenate(seqs), atol=1e-9)
