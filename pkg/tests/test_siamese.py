import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fineehr.embed import NoteEmbedding
from fineehr.errors import TrainingError
from fineehr.siamese import (
    RefinerBundle,
    SiameseNetwork,
    SiamesePair,
    SiameseTrainParams,
    contrastive_loss,
    forward,
    pair_distance,
    pair_loss_grad,
    refine,
    select_pairs,
    sgd_step,
    symmetric_dims,
    train_category,
    train_refiners,
)

from helpers import siamese_gradient_instance, two_cluster_geometry


def _net(dims, seed=0):
    return SiameseNetwork.initialize(dims, np.random.default_rng(seed))


def _two_clusters(n, dim, seed, noise=0.1):
    rng = np.random.default_rng(seed)
    u = np.zeros(dim)
    u[0] = 1.0
    labels = rng.permutation(np.arange(n) % 2)
    xs = [(2 * lbl - 1) * u + noise * rng.normal(size=dim) for lbl in labels]
    return [(x, int(lbl)) for x, lbl in zip(xs, labels)]


class TestNetwork:
    def test_identity_layer(self):
        net = SiameseNetwork([np.eye(3)], [np.zeros(3)])
        x = np.array([0.3, -2.0, 5.0])
        assert forward(net, x).tolist() == x.tolist()

    def test_zero_parameters(self):
        net = SiameseNetwork([np.zeros((4, 2)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
        assert forward(net, np.array([9.0, -3.0])).tolist() == [0.0, 0.0]

    def test_two_layer_hand_evaluation(self):
        W1 = [[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, -0.8]]
        b1 = [0.01, -0.02, 0.03, 0.0]
        W2 = [[0.2, -0.1, 0.4, 0.3], [-0.3, 0.5, 0.1, -0.2]]
        b2 = [0.05, -0.05]
        x = [1.0, -1.0]
        h = [math.tanh(sum(W1[i][j] * x[j] for j in range(2)) + b1[i]) for i in range(4)]
        expected = [sum(W2[k][i] * h[i] for i in range(4)) + b2[k] for k in range(2)]
        net = SiameseNetwork([np.array(W1), np.array(W2)], [np.array(b1), np.array(b2)])
        np.testing.assert_allclose(forward(net, np.array(x)), expected, rtol=0, atol=1e-15)

    def test_dims_rise_then_fall(self):
        assert symmetric_dims(8) == [8, 16, 8]
        for layers in range(1, 6):
            dims = symmetric_dims(8, 2.0, layers)
            assert dims[0] == dims[-1] == 8
            peak = int(np.argmax(dims))
            assert all(a <= b for a, b in zip(dims[:peak], dims[1:peak + 1]))
            assert all(a >= b for a, b in zip(dims[peak:], dims[peak + 1:]))

    def test_unequal_ends_rejected(self):
        with pytest.raises(ValueError):
            SiameseNetwork([np.zeros((3, 2))], [np.zeros(3)])
        with pytest.raises(ValueError):
            SiameseNetwork.initialize([2, 4, 3], np.random.default_rng(0))

    def test_wrong_input_dim(self):
        with pytest.raises(ValueError):
            forward(_net([3, 6, 3]), np.zeros(4))

    @given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 1000))
    def test_output_dim_equals_input(self, d, layers, seed):
        net = _net(symmetric_dims(d, 2.0, layers), seed)
        assert forward(net, np.ones(d)).shape == (d,)

    def test_json_round_trip(self):
        net = _net([3, 5, 3], seed=7)
        back = SiameseNetwork.from_json(net.to_json())
        x = np.array([0.2, 0.1, -0.4])
        assert forward(back, x).tolist() == forward(net, x).tolist()


class TestContrastiveLoss:
    @pytest.mark.parametrize("y, d, margin, expected", [
        (1, 0.0, 1.0, 0.0),
        (0, 2.0, 1.0, 0.0),
        (1, 0.5, 1.0, 0.25),
        (0, 0.4, 1.0, 0.36),
    ])
    def test_examples(self, y, d, margin, expected):
        assert contrastive_loss(y, d, margin) == pytest.approx(expected, abs=1e-15)

    @given(st.integers(0, 1), st.floats(0, 10), st.floats(0.01, 10))
    def test_nonnegative_and_zero_set(self, y, d, margin):
        loss = contrastive_loss(y, d, margin)
        assert loss >= 0
        # squares of values below ~1e-154 underflow to zero
        assume(d == 0 or d > 1e-150)
        assume(margin <= d or margin - d > 1e-150)
        is_zero = (y == 1 and d == 0) or (y == 0 and d >= margin)
        assert (loss == 0) == is_zero


class TestGradients:
    def test_flat_region(self):
        net = _net([2, 3, 2])
        xa, xc = np.array([5.0, 0.0]), np.array([-5.0, 0.0])
        d = pair_distance(net, xa, xc)
        loss, (gw, gb) = pair_loss_grad(net, xa, xc, 0, margin=0.5 * d)
        assert loss == 0.0
        assert all(not g.any() for g in gw + gb)

    def test_identical_inputs(self):
        net = _net([2, 3, 2])
        x = np.array([0.3, 0.7])
        loss, (gw, gb) = pair_loss_grad(net, x, x.copy(), 1, margin=1.0)
        assert loss == 0.0
        assert all(not g.any() for g in gw + gb)

    def test_small_net_matches_finite_differences(self):
        rng = np.random.default_rng(123)
        for _ in range(10):
            assert siamese_gradient_instance(rng) < 1e-4

    @pytest.mark.parametrize("y", [0, 1])
    def test_descent_is_monotone(self, y):
        net = _net([3, 6, 3], seed=2)
        xa, xc = np.array([0.5, -0.2, 0.1]), np.array([0.4, 0.1, -0.3])
        margin = 3.0
        prev = pair_loss_grad(net, xa, xc, y, margin)[0]
        for _ in range(300):
            _, grads = pair_loss_grad(net, xa, xc, y, margin)
            sgd_step(net, grads, 1e-3)
            loss = pair_loss_grad(net, xa, xc, y, margin)[0]
            if prev < 1e-12:
                break
            assert loss <= prev
            prev = loss

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_distance_symmetric(self, seed, d):
        rng = np.random.default_rng(seed)
        net = _net(symmetric_dims(d), seed)
        xa, xc = rng.normal(size=d), rng.normal(size=d)
        assert pair_distance(net, xa, xc) == pair_distance(net, xc, xa)


class TestPairSelection:
    def test_three_notes_enumeration(self):
        notes = {"X": [(None, 1), (None, 1), (None, 0)]}
        allowed = {(0, 1): 1, (0, 2): 0, (1, 2): 0}
        pairs = select_pairs(notes, 50, seed=0)
        assert len(pairs) == 50
        for p in pairs:
            key = tuple(sorted((p.anchor_index, p.contrast_index)))
            assert allowed[key] == p.y

    def test_balance(self):
        notes = {"X": [(None, i % 2) for i in range(30)]}
        pairs = select_pairs(notes, 100, seed=1)
        assert sum(p.y for p in pairs) == 50
        assert len(pairs) == 100

    def test_unbalanced_draws_all_kinds(self):
        notes = {"X": [(None, i % 2) for i in range(10)]}
        pairs = select_pairs(notes, 200, seed=1, balanced=False)
        assert len(pairs) == 200
        assert 0 < sum(p.y for p in pairs) < 200

    def test_ineligible_skipped(self):
        notes = {"X": [(None, 1), (None, 1)], "Y": [(None, 0), (None, 1)]}
        pairs = select_pairs(notes, 10, seed=0)
        assert {p.category for p in pairs} == {"Y"}
        with pytest.raises(TrainingError):
            select_pairs({"X": [(None, 1), (None, 1)]}, 10, seed=0)

    @settings(max_examples=60, deadline=None)
    @given(st.dictionaries(st.sampled_from(["A", "B", "C"]),
                           st.lists(st.integers(0, 1), min_size=1, max_size=12), min_size=1),
           st.integers(1, 40), st.integers(0, 2**31), st.booleans())
    def test_pair_hygiene(self, labels, count, seed, balanced):
        assume(any(len(v) >= 2 and len(set(v)) == 2 for v in labels.values()))
        corpus = {c: [(None, lbl) for lbl in v] for c, v in labels.items()}
        for p in select_pairs(corpus, count, seed, balanced):
            lbl = labels[p.category]
            assert p.anchor_index != p.contrast_index
            assert 0 <= p.anchor_index < len(lbl) and 0 <= p.contrast_index < len(lbl)
            assert p.y == int(lbl[p.anchor_index] == lbl[p.contrast_index])

    def test_pair_type_invariants(self):
        with pytest.raises(ValueError):
            SiamesePair("X", 1, 1, 0)
        with pytest.raises(ValueError):
            SiamesePair("X", 0, 1, 2)

    def test_positive_pairs_cover_all_combinations(self):
        notes = {"X": [(None, 1)] * 4 + [(None, 0)] * 4}
        seen = {tuple(sorted((p.anchor_index, p.contrast_index)))
                for p in select_pairs(notes, 2000, seed=3) if p.y == 1}
        expected = set(combinations(range(4), 2)) | set(combinations(range(4, 8), 2))
        assert seen == expected


class TestTraining:
    def test_params_invariants(self):
        for bad in (dict(margin=0), dict(epochs=0), dict(learning_rate=0), dict(pairs_per_epoch=0)):
            with pytest.raises(ValueError):
                SiameseTrainParams(**bad)

    def test_two_clusters(self):
        intra, apart = two_cluster_geometry(seeds=range(3))
        assert all(ref < raw for raw, ref in intra)
        assert apart >= 0.9

    def test_single_label_category_left_identity(self):
        notes = {"mixed": _two_clusters(10, 3, seed=0), "dead": [(np.ones(3), 1), (np.zeros(3), 1)]}
        bundle = train_refiners(notes, SiameseTrainParams(epochs=2))
        assert set(bundle.networks) == {"mixed"}
        note = NoteEmbedding("1", "dead", np.array([1.0, 2.0, 3.0]), 3)
        assert refine(bundle, note).vector.tolist() == [1.0, 2.0, 3.0]

    def test_no_category_trainable(self):
        with pytest.raises(TrainingError):
            train_refiners({"dead": [(np.ones(3), 1), (np.zeros(3), 1)]}, SiameseTrainParams(epochs=1))

    def test_deterministic_bundle(self):
        notes = {"A": _two_clusters(12, 3, seed=2), "B": _two_clusters(8, 3, seed=3)}
        p = SiameseTrainParams(epochs=3, seed=11)
        a, b = train_refiners(notes, p), train_refiners(notes, p)
        assert a.to_json() == b.to_json()

    def test_bundle_json(self, tmp_path):
        bundle = train_refiners({"A": _two_clusters(8, 2, seed=0)}, SiameseTrainParams(epochs=1))
        back = RefinerBundle.from_json(bundle.to_json())
        assert back.to_json() == bundle.to_json()
        assert back.networks["A"].dim == 2

    def test_zero_net_refines_to_zero(self):
        net = SiameseNetwork([np.zeros((4, 2)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
        out = refine(RefinerBundle(1.0, {"A": net}), NoteEmbedding("1", "A", np.array([1.0, -1.0]), 2))
        assert out.vector.tolist() == [0.0, 0.0]
        assert out.category == "A" and out.n_known_tokens == 2
