import numpy as np
import pytest
from oracles import brute_force_assignment, brute_force_max_overlap

from graphmot.metrics import (
    EvalConfig,
    EvalError,
    box_iou,
    evaluate,
    match_frame,
    pooled_report,
)

CFG3D = EvalConfig(mode="3d", dist_threshold=1.0)
CFG2D = EvalConfig(mode="2d", iou_threshold=0.5)


def seq_from_tracks(tracks, n_frames):
    """tracks: id -> list of per-frame points (None = absent)."""
    seq = {}
    for f in range(n_frames):
        frame = {}
        for tid, pts in tracks.items():
            if f < len(pts) and pts[f] is not None:
                frame[tid] = np.asarray(pts[f], dtype=float)
        seq[f] = frame
    return seq


class TestMatchFrame:
    def test_identical_boxes_all_matched(self):
        gt = {1: (0, 0, 10, 10), 2: (20, 20, 30, 30)}
        matches = match_frame(gt, dict(gt), CFG2D, carryover=None)
        assert matches == {1: 1, 2: 2}

    def test_low_iou_unmatched(self):
        gt = {1: (0, 0, 10, 10)}
        pred = {1: (6, 0, 16, 10)}  # IoU = 4/16 = 0.25
        assert box_iou(gt[1], pred[1]) == pytest.approx(0.25)
        assert match_frame(gt, pred, CFG2D) == {}

    def test_crossing_assignment_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n_gt, n_pred = rng.integers(1, 5), rng.integers(1, 5)
            gt = {i: rng.uniform(0, 3, size=3) for i in range(n_gt)}
            pred = {j: rng.uniform(0, 3, size=3) for j in range(n_pred)}
            matches = match_frame(gt, pred, CFG3D)
            cost = np.zeros((n_gt, n_pred))
            for i in range(n_gt):
                for j in range(n_pred):
                    d = np.linalg.norm(gt[i] - pred[j])
                    cost[i, j] = d if d <= CFG3D.dist_threshold else 1e9
            best, _ = brute_force_assignment(cost)
            got = sum(np.linalg.norm(gt[g] - pred[p]) for g, p in matches.items())
            # same number of in-threshold pairs and the same minimal total cost
            n_valid = sum(1 for g, p in matches.items())
            best_valid, pairs = brute_force_assignment(cost)
            want = sum(cost[g, p] for g, p in pairs if cost[g, p] < 1e9)
            n_want = sum(1 for g, p in pairs if cost[g, p] < 1e9)
            assert n_valid == n_want
            assert got == pytest.approx(want, abs=1e-9)

    def test_carryover_keeps_previous_pairing(self):
        # two GT close together; carryover should stop them from swapping
        gt = {1: np.array([0.0, 0.0, 0.0]), 2: np.array([0.4, 0.0, 0.0])}
        pred = {10: np.array([0.1, 0.0, 0.0]), 20: np.array([0.3, 0.0, 0.0])}
        fresh = match_frame(gt, pred, CFG3D)
        assert fresh == {1: 10, 2: 20}
        kept = match_frame(gt, pred, CFG3D, carryover={1: 20, 2: 10})
        assert kept == {1: 20, 2: 10}


class TestEvaluate:
    def test_perfect_prediction(self):
        gt = seq_from_tracks({1: [(0, 0, 0)] * 10, 2: [(3, 0, 0)] * 10}, 10)
        report = evaluate(gt, gt, CFG3D)
        assert report.mota == 1.0
        assert report.idf1 == 1.0
        assert report.motp == 1.0  # zero distance in 3d convention
        assert report.fp == report.fn == report.idsw == 0

    def test_single_id_switch_hand_count(self):
        gt = seq_from_tracks({1: [(0, 0, 0)] * 10, 2: [(3, 0, 0)] * 10}, 10)
        # prediction A covers gt1 frames 0-4, then a new id C takes over; B covers gt2
        pred = {}
        for f in range(10):
            pred[f] = {}
            pred[f][100 if f < 5 else 300] = np.array([0.0, 0.0, 0.0])
            pred[f][200] = np.array([3.0, 0.0, 0.0])
        report = evaluate(gt, pred, CFG3D)
        assert report.idsw == 1
        assert report.fp == 0 and report.fn == 0
        assert report.mota == pytest.approx(1.0 - 1.0 / 20.0)
        # IDF1: best matching covers 5 (gt1) + 10 (gt2) of 20+20 boxes
        assert report.idf1 == pytest.approx(2 * 15 / 40)

    def test_empty_predictions_mota_zero(self):
        gt = seq_from_tracks({1: [(0, 0, 0)] * 5}, 5)
        report = evaluate(gt, {}, CFG3D)
        assert report.fn == 5 and report.fp == 0 and report.idsw == 0
        assert report.mota == 0.0
        assert report.idf1 == 0.0

    def test_empty_gt_is_error(self):
        with pytest.raises(EvalError):
            evaluate({0: {}}, {0: {}}, CFG3D)

    def test_fp_monotonically_hurts_mota(self):
        gt = seq_from_tracks({1: [(0, 0, 0)] * 10}, 10)
        motas = []
        for n_fp in range(3):
            pred = {}
            for f in range(10):
                pred[f] = {1: np.array([0.0, 0.0, 0.0])}
                for k in range(n_fp):
                    pred[f][100 + k] = np.array([5.0 + 3 * k, 5.0, 0.0])
            motas.append(evaluate(gt, pred, CFG3D).mota)
        assert motas[0] > motas[1] > motas[2]

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n_frames = 8
            gt = seq_from_tracks(
                {i: [rng.uniform(-5, 5, size=3) for _ in range(n_frames)] for i in range(3)},
                n_frames)
            pred = {f: {tid: p + rng.normal(0, 0.1, size=3) for tid, p in objs.items()}
                    for f, objs in gt.items()}
            base = evaluate(gt, pred, CFG3D)
            remap = {0: 7, 1: 5, 2: 9}
            permuted = {f: {remap[tid]: p for tid, p in objs.items()}
                        for f, objs in pred.items()}
            perm = evaluate(gt, permuted, CFG3D)
            assert perm.mota == pytest.approx(base.mota)
            assert perm.idf1 == pytest.approx(base.idf1)
            assert perm.motp == pytest.approx(base.motp)

    def test_idf1_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            n_frames = 6
            n_gt, n_pred = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            gt = seq_from_tracks(
                {i: [rng.uniform(-2, 2, size=3) for _ in range(n_frames)] for i in range(n_gt)},
                n_frames)
            pred = seq_from_tracks(
                {i: [rng.uniform(-2, 2, size=3) for _ in range(n_frames)] for i in range(n_pred)},
                n_frames)
            report = evaluate(gt, pred, CFG3D)
            overlap = np.zeros((n_gt, n_pred))
            for f in range(n_frames):
                for gi in range(n_gt):
                    for pj in range(n_pred):
                        if np.linalg.norm(gt[f][gi] - pred[f][pj]) <= 1.0:
                            overlap[gi, pj] += 1
            idtp = brute_force_max_overlap(overlap)
            gt_total = n_gt * n_frames
            pred_total = n_pred * n_frames
            assert report.idf1 == pytest.approx(2 * idtp / (gt_total + pred_total))

    def test_2d_mode_mean_iou_motp(self):
        gt = {0: {1: (0, 0, 10, 10)}}
        pred = {0: {1: (0, 0, 10, 12)}}  # IoU = 100/120
        report = evaluate(gt, pred, CFG2D)
        assert report.matches == 1
        assert report.motp == pytest.approx(100 / 120)

    def test_3d_and_2d_agree_on_consistent_geometry(self):
        # same association task expressed as near-identical boxes / points
        gt3 = seq_from_tracks({1: [(0, 0, 0)] * 5, 2: [(4, 0, 0)] * 5}, 5)
        pred3 = seq_from_tracks({9: [(0.1, 0, 0)] * 5, 8: [(4.1, 0, 0)] * 5}, 5)
        r3 = evaluate(gt3, pred3, CFG3D)
        gt2 = {f: {1: (0, 0, 10, 10), 2: (40, 0, 50, 10)} for f in range(5)}
        pred2 = {f: {9: (1, 0, 11, 10), 8: (41, 0, 51, 10)} for f in range(5)}
        r2 = evaluate(gt2, pred2, CFG2D)
        assert (r3.fp, r3.fn, r3.idsw) == (r2.fp, r2.fn, r2.idsw)
        assert r3.idf1 == pytest.approx(r2.idf1)


class TestPooled:
    def test_pooled_counts(self):
        gt = seq_from_tracks({1: [(0, 0, 0)] * 10}, 10)
        r1 = evaluate(gt, gt, CFG3D)
        empty = evaluate(gt, {}, CFG3D)
        pooled = pooled_report([r1, empty])
        assert pooled.gt_total == 20
        assert pooled.fn == 10
        assert pooled.mota == pytest.approx(0.5)
