import math

import numpy as np
import pytest
from oracles import optimal_partition_cost, random_scored_instance

from graphmot.extract import (
    CostGraph,
    ExtractConfig,
    ExtractError,
    TrajectorySet,
    edge_cost,
    extract,
    extract_scores,
    gap_report,
    lower_bound,
    optimality_gap,
    solution_cost,
    streaming_extract,
    trajectory_points_3d,
)
from graphmot.graph import Detection, EdgeKind, GraphConfig, STGraph

CFG = ExtractConfig()


def det(i, cam=0, frame=0, world=(0.0, 0.0, 0.0)):
    return Detection(id=i, camera=cam, frame=frame,
                     bbox=(10.0 * i, 5.0, 10.0 * i + 8.0, 25.0), world=world)


def chain_graph():
    g = STGraph(GraphConfig())
    g.add_frame(0, [det(0)])
    g.add_frame(1, [det(1, frame=1, world=(0.1, 0, 0))])
    g.add_frame(2, [det(2, frame=2, world=(0.2, 0, 0))])
    return g


class TestConfig:
    def test_thresholds_validated(self):
        with pytest.raises(ExtractError):
            ExtractConfig(tau_vertex=0.0)
        with pytest.raises(ExtractError):
            ExtractConfig(tau_edge=1.0)


class TestValidMerge:
    def test_disjoint_frames_merge(self):
        ts = TrajectorySet()
        ts.add(0, 0, 0)
        ts.add(1, 1, 0)
        assert ts.valid_merge(0, 1)
        assert ts.union(0, 1)

    def test_shared_slot_refused(self):
        ts = TrajectorySet()
        ts.add(0, 5, 2)
        ts.add(1, 5, 2)
        assert not ts.valid_merge(0, 1)
        assert not ts.union(0, 1)
        assert len(ts.groups()) == 2

    def test_same_root_is_noop_true(self):
        ts = TrajectorySet()
        ts.add(0, 0, 0)
        ts.add(1, 1, 0)
        ts.union(0, 1)
        assert ts.valid_merge(0, 1)
        assert ts.union(0, 1)


class TestExtract:
    def test_chain_becomes_one_trajectory(self):
        g = chain_graph()
        edge_probs = {k: 0.9 for k in g.edges}
        vertex_probs = {v: 0.9 for v in g.vertices}
        ts = extract(edge_probs, vertex_probs, g, CFG)
        assert ts.labels() == {0: 0, 1: 0, 2: 0}

    def test_adversarial_same_slot_edge_refused(self):
        meta = {0: (3, 1), 1: (3, 1)}
        edge_probs = {(EdgeKind.TEMPORAL, 0, 1): 0.95}
        ts = extract_scores(edge_probs, {0: 0.9, 1: 0.9}, meta, CFG)
        assert ts.labels() == {0: 0, 1: 1}

    def test_low_confidence_vertices_dropped(self):
        g = chain_graph()
        edge_probs = {k: 0.9 for k in g.edges}
        vertex_probs = {0: 0.9, 1: 0.2, 2: 0.9}
        ts = extract(edge_probs, vertex_probs, g, CFG)
        labels = ts.labels()
        assert 1 not in labels
        # 0 and 2 are linked by the gap-2 temporal edge, so they still merge
        assert labels[0] == labels[2]

    def test_singletons_kept(self):
        meta = {0: (0, 0), 1: (4, 0)}
        ts = extract_scores({}, {0: 0.8, 1: 0.8}, meta, CFG)
        assert ts.labels() == {0: 0, 1: 1}

    def test_deterministic_tie_break(self):
        meta = {0: (0, 0), 1: (1, 0), 2: (1, 1)}
        # both edges tie at 0.9 but (0,1) sorts first and wins nothing from (0,2)
        edge_probs = {(EdgeKind.TEMPORAL, 0, 1): 0.9, (EdgeKind.TEMPORAL, 0, 2): 0.9}
        a = extract_scores(edge_probs, {i: 0.9 for i in meta}, meta, CFG).labels()
        b = extract_scores(edge_probs, {i: 0.9 for i in meta}, meta, CFG).labels()
        assert a == b
        assert a[0] == a[1] == a[2]  # (1,0) and (1,1) do not conflict

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            edge_probs, vertex_probs, meta = random_scored_instance(rng)
            merged = []
            for tau in (0.3, 0.5, 0.7):
                cfg = ExtractConfig(tau_edge=tau)
                ts = extract_scores(edge_probs, vertex_probs, meta, cfg)
                n_groups = len(ts.groups())
                merged.append(len(ts) - n_groups)  # merges performed
            assert merged[0] >= merged[1] >= merged[2]


class TestGreedyVsOracle:
    def test_matches_enumeration_on_small_instances(self):
        rng = np.random.default_rng(7)
        equal = 0
        total = 300
        for _ in range(total):
            edge_probs, vertex_probs, meta = random_scored_instance(rng)
            ts = extract_scores(edge_probs, vertex_probs, meta, CFG)
            labels = ts.labels()
            greedy = solution_cost(labels, edge_probs, CFG)
            admitted = [v for v in meta if vertex_probs[v] > CFG.tau_vertex]
            passing = [(k[1], k[2], edge_cost(p)) for k, p in edge_probs.items()
                       if p > CFG.tau_edge and k[1] in labels and k[2] in labels]
            optimal = optimal_partition_cost(admitted, meta, passing)
            assert greedy >= optimal - 1e-9
            if abs(greedy - optimal) < 1e-9:
                equal += 1
            # occupancy uniqueness on every instance
            for group in ts.groups():
                slots = [meta[v] for v in group]
                assert len(slots) == len(set(slots))
        assert equal / total >= 0.9


class TestStreaming:
    def build_frames(self):
        return [[det(0)],
                [det(1, frame=1, world=(0.1, 0, 0))],
                [det(2, frame=2, world=(0.2, 0, 0))]]

    def test_single_window_equals_batch(self):
        g = chain_graph()
        edge_probs = {k: 0.9 for k in g.edges}
        vertex_probs = {v: 0.9 for v in g.vertices}
        batch = extract(edge_probs, vertex_probs, g, CFG).labels()
        ts = TrajectorySet()
        streaming_extract(ts, edge_probs, vertex_probs, g, CFG)
        assert ts.labels() == batch

    def test_identity_spans_windows(self):
        cfg = GraphConfig(w=2, max_temporal_gap_train=1, max_temporal_gap_infer=1)
        g = STGraph(cfg)
        ts = TrajectorySet()
        for f in range(6):
            g.add_frame(f, [det(f, frame=f, world=(0.05 * f, 0, 0))])
            g.prune_oldest()
            edge_probs = {k: 0.9 for k in g.edges}
            vertex_probs = {v: 0.9 for v in g.vertices}
            streaming_extract(ts, edge_probs, vertex_probs, g, cfg=CFG)
        labels = ts.labels()
        assert len(set(labels.values())) == 1
        assert set(labels) == set(range(6))

    def test_labels_frozen_after_pruning(self):
        cfg = GraphConfig(w=2, max_temporal_gap_train=1, max_temporal_gap_infer=1)
        g = STGraph(cfg)
        ts = TrajectorySet()
        # two far-apart detections that never share an edge
        g.add_frame(0, [det(0, world=(0, 0, 0))])
        streaming_extract(ts, {}, {0: 0.9}, g, CFG)
        label0 = ts.labels()[0]
        for f in range(1, 5):
            g.add_frame(f, [det(f, frame=f, world=(5.0, 5.0, 0))])
            g.prune_oldest()
            streaming_extract(ts, {k: 0.9 for k in g.edges},
                              {v: 0.9 for v in g.vertices}, g, CFG)
        assert ts.labels()[0] == label0

    def test_never_admitted_vertex_absent(self):
        g = STGraph(GraphConfig())
        g.add_frame(0, [det(0)])
        ts = TrajectorySet()
        streaming_extract(ts, {}, {0: 0.1}, g, CFG)
        assert 0 not in ts.labels()


class TestCosts:
    def test_half_probability_is_free(self):
        assert edge_cost(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_cost_sign(self):
        assert edge_cost(0.9) < 0 < edge_cost(0.1)

    def test_lower_bound_fixture(self):
        # probabilities chosen so the costs are exactly {-1.2, +0.5, -0.3}
        probs = {
            (EdgeKind.TEMPORAL, 0, 1): 1 / (1 + math.exp(-1.2)),
            (EdgeKind.TEMPORAL, 0, 2): 1 / (1 + math.exp(0.5)),
            (EdgeKind.TEMPORAL, 1, 2): 1 / (1 + math.exp(-0.3)),
        }
        cg = CostGraph.from_probs(probs)
        assert lower_bound(cg) == pytest.approx(-1.5, abs=1e-12)

    def test_gap_zero_when_solution_takes_all_negatives(self):
        probs = {
            (EdgeKind.TEMPORAL, 0, 1): 1 / (1 + math.exp(-1.2)),
            (EdgeKind.TEMPORAL, 0, 2): 1 / (1 + math.exp(0.5)),
            (EdgeKind.TEMPORAL, 1, 2): 1 / (1 + math.exp(-0.3)),
        }
        meta = {0: (0, 0), 1: (1, 0), 2: (2, 0)}
        ts = extract_scores(probs, {i: 0.9 for i in meta}, meta, CFG)
        report = gap_report(ts.labels(), probs, CFG)
        assert report["lower_bound"] == pytest.approx(-1.5, abs=1e-12)
        assert report["gap"] == 0.0

    def test_gap_not_applicable_without_negative_costs(self):
        assert optimality_gap(0.0, 0.0) is None
        report = gap_report({}, {(EdgeKind.TEMPORAL, 0, 1): 0.3}, CFG)
        assert not report["applicable"]

    def test_gap_non_negative_randomized(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            edge_probs, vertex_probs, meta = random_scored_instance(rng)
            ts = extract_scores(edge_probs, vertex_probs, meta, CFG)
            cg = CostGraph.from_probs(edge_probs)
            lb = lower_bound(cg)
            sol = solution_cost(ts.labels(), edge_probs, CFG)
            gap = optimality_gap(sol, lb)
            if gap is not None:
                assert gap >= -1e-12


class TestOutputs:
    def test_3d_points_average_across_cameras(self):
        dets = {
            0: det(0, cam=0, frame=0, world=(1.0, 0.0, 0.0)),
            1: det(1, cam=1, frame=0, world=(1.2, 0.2, 0.0)),
            2: det(2, cam=0, frame=1, world=(2.0, 0.0, 0.0)),
        }
        labels = {0: 0, 1: 0, 2: 0}
        rows = trajectory_points_3d(labels, dets)
        assert rows[0] == (0, 0, pytest.approx(1.1), pytest.approx(0.1), 0.0)
        assert rows[1] == (1, 0, 2.0, 0.0, 0.0)
