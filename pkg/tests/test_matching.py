import math

import numpy as np
import pytest

from boxsfm.errors import EmbeddingDimMismatch
from boxsfm.geom import OrientedBox3, YawPose, box_corners, transform_box
from boxsfm.matching import match_corners, match_objects, threshold_detections
from conftest import make_frame, random_box, random_unit_embeddings


class TestThresholdDetections:
    def _frame(self, scores):
        rng = np.random.Generator(np.random.Philox(key=20))
        boxes = [random_box(rng) for _ in scores]
        return make_frame(0, boxes, random_unit_embeddings(rng, len(scores)), scores=scores)

    def test_tau_zero_keeps_all(self):
        frame = self._frame([0.1, 0.5, 0.9])
        assert len(threshold_detections(frame, 0.0)) == 3

    def test_tau_filters_and_preserves_source_index(self):
        frame = self._frame([0.3, 0.2, 0.9])
        kept = threshold_detections(frame, 0.25).detections
        assert [d.source_index for d in kept] == [0, 2]

    def test_tau_one_empties(self):
        frame = self._frame([0.3, 0.2, 0.9])
        assert len(threshold_detections(frame, 1.0)) == 0

    def test_boundary_is_inclusive(self):
        frame = self._frame([0.25, 0.2499999])
        kept = threshold_detections(frame, 0.25).detections
        assert [d.source_index for d in kept] == [0]


class TestMatchObjects:
    def test_orthogonal_identity(self):
        rng = np.random.Generator(np.random.Philox(key=21))
        n = 6
        emb = np.eye(32)[:n]
        boxes = [random_box(rng) for _ in range(n)]
        fa = make_frame(0, boxes, emb)
        fb = make_frame(1, boxes, emb)
        matches = match_objects(fa, fb, match_threshold=0.5)
        assert [(m.index_a, m.index_b) for m in matches] == [(i, i) for i in range(n)]
        assert all(m.score > 0.99 for m in matches)

    def test_disjoint_embeddings_do_not_match(self):
        rng = np.random.Generator(np.random.Philox(key=22))
        fa = make_frame(0, [random_box(rng) for _ in range(10)], random_unit_embeddings(rng, 10))
        fb = make_frame(1, [random_box(rng) for _ in range(10)], random_unit_embeddings(rng, 10))
        assert match_objects(fa, fb, match_threshold=0.5) == []

    def test_shared_subset_recovered(self):
        rng = np.random.Generator(np.random.Philox(key=23))
        emb = random_unit_embeddings(rng, 12)
        boxes = [random_box(rng) for _ in range(12)]
        fa = make_frame(0, boxes[:8], emb[:8])
        # Frame b sees objects 3..11; its index i maps to object i + 3.
        fb = make_frame(1, boxes[3:], emb[3:])
        matches = {(m.index_a, m.index_b) for m in match_objects(fa, fb)}
        true_pairs = {(i, i - 3) for i in range(3, 8)}
        # Every co-visible object is matched correctly; objects without a
        # counterpart may still pair up spuriously (geometric verification is
        # what rejects those downstream), but never steal a co-visible one.
        assert true_pairs <= matches
        for ia, ib in matches - true_pairs:
            assert ia < 3 and ib >= 5

    def test_partial_injective(self):
        rng = np.random.Generator(np.random.Philox(key=24))
        for trial in range(20):
            na, nb = rng.integers(1, 15, size=2)
            ea = random_unit_embeddings(rng, na)
            eb = random_unit_embeddings(rng, nb)
            fa = make_frame(0, [random_box(rng) for _ in range(na)], ea)
            fb = make_frame(1, [random_box(rng) for _ in range(nb)], eb)
            matches = match_objects(fa, fb, match_threshold=0.0)
            assert len({m.index_a for m in matches}) == len(matches)
            assert len({m.index_b for m in matches}) == len(matches)
            assert len(matches) <= min(na, nb)

    def test_symmetric_up_to_swap(self):
        rng = np.random.Generator(np.random.Philox(key=25))
        for trial in range(20):
            shared = random_unit_embeddings(rng, 5)
            ea = np.vstack([shared, random_unit_embeddings(rng, 3)])
            eb = np.vstack([random_unit_embeddings(rng, 2), shared])
            fa = make_frame(0, [random_box(rng) for _ in range(8)], ea)
            fb = make_frame(1, [random_box(rng) for _ in range(7)], eb)
            ab = {(m.index_a, m.index_b) for m in match_objects(fa, fb)}
            ba = {(m.index_b, m.index_a) for m in match_objects(fb, fa)}
            assert ab == ba

    def test_dim_mismatch(self):
        rng = np.random.Generator(np.random.Philox(key=26))
        fa = make_frame(0, [random_box(rng)], random_unit_embeddings(rng, 1, dim=32))
        fb = make_frame(1, [random_box(rng)], random_unit_embeddings(rng, 1, dim=16))
        with pytest.raises(EmbeddingDimMismatch):
            match_objects(fa, fb)

    def test_empty_frames(self):
        rng = np.random.Generator(np.random.Philox(key=27))
        fa = make_frame(0, [], np.zeros((0, 32)))
        fb = make_frame(1, [random_box(rng)], random_unit_embeddings(rng, 1))
        assert match_objects(fa, fb) == []


class TestMatchCorners:
    def _matched_pair(self, rng, boxes_a, boxes_b):
        emb = random_unit_embeddings(rng, len(boxes_a))
        fa = make_frame(0, boxes_a, emb)
        fb = make_frame(1, boxes_b, emb)
        matches = match_objects(fa, fb)
        return fa, fb, matches

    def test_identity_observation(self):
        rng = np.random.Generator(np.random.Philox(key=28))
        boxes = [random_box(rng) for _ in range(4)]
        fa, fb, matches = self._matched_pair(rng, boxes, boxes)
        corners = match_corners(fa, fb, matches)
        assert len(corners) == 8 * len(matches)
        for cm in corners:
            assert cm.corner_a == cm.corner_b
            assert cm.score > 0.999

    def test_half_turn_ambiguity_resolved(self):
        rng = np.random.Generator(np.random.Philox(key=29))
        # Same physical boxes, re-described with yaw + pi in the second frame.
        boxes_a = [random_box(rng, dims_lo=0.5, dims_hi=1.5) for _ in range(3)]
        boxes_b = [OrientedBox3(b.center, b.dims, b.yaw + math.pi) for b in boxes_a]
        fa, fb, matches = self._matched_pair(rng, boxes_a, boxes_b)
        assert len(matches) == 3
        corners = match_corners(fa, fb, matches)
        for cm in corners:
            pa = box_corners(fa.detections[cm.object_match.index_a].box)[cm.corner_a]
            pb = box_corners(fb.detections[cm.object_match.index_b].box)[cm.corner_b]
            assert np.linalg.norm(pa - pb) < 1e-9
            assert cm.score > 0.999
            assert cm.corner_a != cm.corner_b

    def test_posed_observation_identity_permutation(self):
        rng = np.random.Generator(np.random.Philox(key=30))
        pose = YawPose(1.2, np.array([0.5, 0.1, -2.0]))
        boxes_a = [random_box(rng) for _ in range(3)]
        boxes_b = [transform_box(b, pose) for b in boxes_a]
        fa, fb, matches = self._matched_pair(rng, boxes_a, boxes_b)
        corners = match_corners(fa, fb, matches)
        for cm in corners:
            pa = box_corners(fa.detections[cm.object_match.index_a].box)[cm.corner_a]
            pb = box_corners(fb.detections[cm.object_match.index_b].box)[cm.corner_b]
            assert np.linalg.norm(pose.apply(pa) - pb) < 1e-9

    def test_single_flipped_pair_selects_half_turn(self):
        # With one matched pair the two interpretations are exactly tied; the
        # consensus tie-break prefers the smaller relative yaw, which for a
        # flipped observation of an unmoved box is the half-turn permutation.
        rng = np.random.Generator(np.random.Philox(key=33))
        box = random_box(rng, dims_lo=0.5, dims_hi=1.5)
        flipped = OrientedBox3(box.center, box.dims, box.yaw + math.pi)
        fa, fb, matches = self._matched_pair(rng, [box], [flipped])
        corners = match_corners(fa, fb, matches)
        assert len(corners) == 8
        for cm in corners:
            assert cm.corner_b == cm.corner_a ^ 5
            pa = box_corners(box)[cm.corner_a]
            pb = box_corners(flipped)[cm.corner_b]
            assert np.linalg.norm(pa - pb) < 1e-9

    def test_no_object_matches(self):
        rng = np.random.Generator(np.random.Philox(key=31))
        boxes = [random_box(rng)]
        fa, fb, _ = self._matched_pair(rng, boxes, boxes)
        assert match_corners(fa, fb, []) == []

    def test_corner_matches_respect_object_assignment(self):
        rng = np.random.Generator(np.random.Philox(key=32))
        boxes = [random_box(rng) for _ in range(5)]
        fa, fb, matches = self._matched_pair(rng, boxes, boxes)
        pair_set = {(m.index_a, m.index_b) for m in matches}
        for cm in match_corners(fa, fb, matches):
            assert (cm.object_match.index_a, cm.object_match.index_b) in pair_set
