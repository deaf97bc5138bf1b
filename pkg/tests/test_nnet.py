import numpy as np
import pytest

from brainet import nnet
from brainet.nnet import (
    AdamState,
    NetworkError,
    SubNetworkSelection,
    argmax_selection,
    build_network,
    forward,
    forward_simultaneous,
    load_weights,
    save_weights,
    train_step,
    uniform_selection,
)
from brainet.structure import Branch, StructureNode
from brainet.graph import complete_graph

from oracles import (
    finite_difference_gradients,
    max_relative_gradient_error,
    naive_forward,
)


def leaf(vars_, node_id, score=-1.0):
    return StructureNode(variables=frozenset(vars_), node_id=node_id, score=score)


def two_branch_tree(scores=(-1.0, -2.0), vars_=(0, 1)):
    """Root with two branches, each a single pass-through container over one
    shared-width gather of the same variables."""
    branches = [
        Branch(t, f"r/{t}", complete_graph(vars_), [], leaf(vars_, f"r/{t}/d", scores[t]))
        for t in range(2)
    ]
    return StructureNode(variables=frozenset(vars_), node_id="r", branches=branches)


def decomposed_tree():
    """Root with one branch: two singleton ancestors plus a descendant pair."""
    branch = Branch(
        0,
        "r/0",
        complete_graph([0, 1, 2, 3]),
        [leaf({0}, "r/0/a0", -1.0), leaf({1}, "r/0/a1", -2.0)],
        leaf({2, 3}, "r/0/d", -3.0),
    )
    return StructureNode(
        variables=frozenset({0, 1, 2, 3}), node_id="r", branches=[branch]
    )


class TestBuild:
    def test_leaf_only_tree_feeds_head_directly(self):
        h = build_network(leaf({0, 1, 2}, "r"), head="softmax", class_count=4)
        assert len(h.layers) == 0
        assert len(h.containers) == 0
        assert h.head.incoming == ("gather", "r")
        assert h.gathers["r"].columns == (0, 1, 2)
        X = np.random.default_rng(0).normal(size=(5, 3))
        out = forward(h, SubNetworkSelection({}, 0.0), X)
        assert out.shape == (5, 4)

    def test_container_and_layer_counts_follow_construction(self):
        """One site, one branch with k=2 ancestors: the container holds k
        layers; a branch without ancestors keeps one pass-through layer."""
        h = build_network(decomposed_tree(), head="softmax", class_count=2, width=8)
        assert len(h.containers) == 1
        assert len(h.containers["r"].groups[0]) == 2
        assert len(h.layers) == 2
        h2 = build_network(two_branch_tree(), head="softmax", class_count=2, width=8)
        assert len(h2.containers) == 1
        assert [len(g) for g in h2.containers["r"].groups] == [1, 1]

    def test_branch_groups_share_total_width(self):
        h = build_network(decomposed_tree(), head="softmax", class_count=2, width=9)
        group = h.containers["r"].groups[0]
        widths = [h.layers[lid].width for lid in group]
        assert sum(widths) == 9

    def test_scripted_five_variable_example(self):
        """Two-branch decomposition over A..E replayed as a scripted tree.

        Counts follow the construction rules: one layer per ancestor set in
        a branch, one pass-through layer for a branch without ancestors, one
        gather per leaf, one container per internal node.
        """
        desc_site = StructureNode(
            variables=frozenset({3, 4}),
            node_id="r/0/d",
            branches=[
                Branch(t, f"r/0/d/{t}", complete_graph([3, 4]), [],
                       leaf({3, 4}, f"r/0/d/{t}/d", -1.0 - t))
                for t in range(2)
            ],
        )
        root = StructureNode(
            variables=frozenset(range(5)),
            node_id="r",
            branches=[
                Branch(
                    0,
                    "r/0",
                    complete_graph(range(5)),
                    [leaf({0, 1}, "r/0/a0", -2.0), leaf({2}, "r/0/a1", -3.0)],
                    desc_site,
                ),
                Branch(
                    1,
                    "r/1",
                    complete_graph(range(5)),
                    [leaf({0, 1, 2}, "r/1/a0", -4.0)],
                    leaf({3, 4}, "r/1/d", -5.0),
                ),
            ],
        )
        h = build_network(root, head="softmax", class_count=2, width=8)
        assert len(h.containers) == 2  # root site and the nested descendant site
        assert len(h.gathers) == 6  # every leaf gathers once
        # root: k=2 plus k=1 layers; nested site: one pass-through per branch
        assert [len(g) for g in h.containers["r"].groups] == [2, 1]
        assert [len(g) for g in h.containers["r/0/d"].groups] == [1, 1]
        assert len(h.layers) == 5

    def test_shared_children_built_once(self):
        shared_anc = leaf({0}, "shared-a")
        shared_desc = leaf({1}, "shared-d")
        branches = [
            Branch(t, f"r/{t}", complete_graph([0, 1]), [shared_anc], shared_desc)
            for t in range(2)
        ]
        root = StructureNode(
            variables=frozenset({0, 1}), node_id="r", branches=branches
        )
        h = build_network(root, head="softmax", class_count=2, width=4)
        assert set(h.gathers) == {"shared-a", "shared-d"}
        assert len(h.containers["r"].groups) == 2
        # two branch layers, each reading the same two gathers
        for group in h.containers["r"].groups:
            (lid,) = group
            assert set(h.layers[lid].incoming) == {
                ("gather", "shared-a"),
                ("gather", "shared-d"),
            }

    def test_head_validation(self):
        with pytest.raises(NetworkError):
            build_network(leaf({0}, "r"), head="softmax", class_count=None)
        with pytest.raises(NetworkError):
            build_network(leaf({0}, "r"), head="banana")


class TestForward:
    def test_zero_weights_give_uniform_softmax(self):
        h = build_network(two_branch_tree(), head="softmax", class_count=5, width=6)
        for key in h.params:
            h.params[key] = np.zeros_like(h.params[key])
        sel = argmax_selection(h)
        out = forward(h, sel, np.random.default_rng(1).normal(size=(7, 2)))
        assert np.allclose(np.exp(out), 0.2)

    def test_eval_mode_deterministic(self):
        h = build_network(decomposed_tree(), head="softmax", class_count=3, width=8)
        sel = argmax_selection(h)
        X = np.random.default_rng(2).normal(size=(6, 4))
        assert np.array_equal(forward(h, sel, X), forward(h, sel, X))

    def test_rows_sum_to_one(self):
        h = build_network(decomposed_tree(), head="softmax", class_count=3, width=8)
        sel = argmax_selection(h)
        out = forward(h, sel, np.random.default_rng(3).normal(size=(11, 4)))
        assert np.allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-9)

    def test_matches_naive_recomputation(self):
        rng = np.random.default_rng(4)
        for tree in (two_branch_tree(), decomposed_tree()):
            h = build_network(tree, head="softmax", class_count=3, width=7, seed=9)
            # make batchnorm statistics non-trivial
            for lid in h.bn_stats:
                h.bn_stats[lid]["mean"] = rng.normal(size=h.layers[lid].width)
                h.bn_stats[lid]["var"] = rng.uniform(0.5, 2.0, h.layers[lid].width)
            sel = uniform_selection(tree, rng)
            X = rng.normal(size=(9, 4))
            mine = forward(h, sel, X, mode="eval")
            theirs = naive_forward(h, sel, X)
            assert np.allclose(mine, theirs, atol=1e-12)

    def test_missing_selection_rejected(self):
        h = build_network(two_branch_tree(), head="softmax", class_count=2)
        with pytest.raises(NetworkError, match="selection"):
            forward(h, SubNetworkSelection({}, 0.0), np.zeros((2, 2)))

    def test_width_mismatch_rejected(self):
        h = build_network(decomposed_tree(), head="softmax", class_count=2)
        with pytest.raises(NetworkError, match="width"):
            forward(h, argmax_selection(h), np.zeros((2, 2)))


class TestSimultaneous:
    def test_single_branch_equals_forward(self):
        tree = decomposed_tree()
        h = build_network(tree, head="softmax", class_count=3, width=8, seed=1)
        X = np.random.default_rng(5).normal(size=(6, 4))
        sel = argmax_selection(h)
        assert np.allclose(forward_simultaneous(h, X), forward(h, sel, X))

    def test_identical_branches_equal_either_one(self):
        tree = two_branch_tree(scores=(-1.0, -1.0))
        h = build_network(tree, head="softmax", class_count=2, width=6, seed=2)
        # copy branch 0 weights onto branch 1 (key carries the layer id and
        # the source ref, both naming the branch)
        for key in list(h.params):
            if "r/0/" in key:
                h.params[key.replace("r/0/", "r/1/")] = h.params[key].copy()
        X = np.random.default_rng(6).normal(size=(5, 2))
        sel0 = SubNetworkSelection({"r": 0}, -1.0)
        assert np.allclose(forward_simultaneous(h, X), forward(h, sel0, X))

    def test_two_branch_hand_weighted_average(self):
        tree = two_branch_tree(scores=(np.log(3.0), 0.0))
        h = build_network(tree, head="softmax", class_count=2, width=4, seed=3)
        X = np.random.default_rng(7).normal(size=(8, 2))

        def group_value(t):
            (lid,) = h.containers["r"].groups[t]
            spec = h.layers[lid]
            z = h.params[f"b|{lid}"] + X[:, [0, 1]] @ h.params[
                f"w|{lid}|gather:r/{t}/d"
            ]
            xhat = (z - h.bn_stats[lid]["mean"]) / np.sqrt(
                h.bn_stats[lid]["var"] + h.bn_eps
            )
            return np.maximum(h.params[f"bng|{lid}"] * xhat + h.params[f"bnb|{lid}"], 0)

        w0 = 3.0 / 4.0  # softmax of (ln 3, 0)
        mixed = w0 * group_value(0) + (1 - w0) * group_value(1)
        logits = mixed @ h.params["w|head|site:r"] + h.params["b|head"]
        expected = logits - (
            logits.max(1, keepdims=True)
            + np.log(
                np.exp(logits - logits.max(1, keepdims=True)).sum(1, keepdims=True)
            )
        )
        assert np.allclose(forward_simultaneous(h, X, gamma=1.0), expected, atol=1e-12)

    def test_gamma_limit_matches_argmax_selection(self):
        tree = two_branch_tree(scores=(-5.0, -2.0))
        h = build_network(tree, head="softmax", class_count=3, width=5, seed=4)
        X = np.random.default_rng(8).normal(size=(4, 2))
        sel = argmax_selection(h)
        assert sel.choices["r"] == 1
        assert np.allclose(
            forward_simultaneous(h, X, gamma=1e-9), forward(h, sel, X), atol=1e-9
        )

    def test_gamma_validated(self):
        h = build_network(two_branch_tree(), head="softmax", class_count=2)
        with pytest.raises(NetworkError):
            forward_simultaneous(h, np.zeros((1, 2)), gamma=0.0)


class TestTraining:
    def test_zero_learning_rate_keeps_weights(self):
        tree = decomposed_tree()
        h = build_network(tree, head="softmax", class_count=2, width=6, seed=5)
        before = {k: v.copy() for k, v in h.params.items()}
        rng = np.random.default_rng(9)
        sel = uniform_selection(tree, rng)
        loss = train_step(
            h,
            sel,
            rng.normal(size=(8, 4)),
            rng.integers(0, 2, 8),
            optimizer=AdamState(lr=0.0),
        )
        assert np.isfinite(loss)
        for key in before:
            assert np.array_equal(before[key], h.params[key])

    def test_linear_regression_converges(self):
        # single linear layer: gaussian head straight off the gather
        tree = leaf({0}, "r", score=0.0)
        h = build_network(tree, head="gaussian", seed=6)
        rng = np.random.default_rng(10)
        X = rng.uniform(-1, 1, size=(256, 1))
        y = 2.0 * X[:, 0]
        opt = AdamState(lr=0.01)
        sel = SubNetworkSelection({}, 0.0)
        for step in range(2000):
            train_step(h, sel, X, y, loss="gaussian-nll", optimizer=opt)
        mu = forward(h, sel, X)[:, 0]
        rmse = float(np.sqrt(((mu - y) ** 2).mean()))
        assert rmse < 0.05

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        tree = decomposed_tree()
        h = build_network(tree, head="softmax", class_count=3, width=5, seed=7)
        sel = argmax_selection(h)
        X = rng.normal(size=(6, 4))
        y = rng.integers(0, 3, 6)
        _, grads, fd = finite_difference_gradients(h, sel, X, y, "cross-entropy")
        assert max_relative_gradient_error(grads, fd) < 1e-4

    def test_gaussian_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        tree = two_branch_tree()
        h = build_network(tree, head="gaussian", width=4, seed=8)
        sel = uniform_selection(tree, rng)
        X = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        _, grads, fd = finite_difference_gradients(h, sel, X, y, "gaussian-nll")
        assert max_relative_gradient_error(grads, fd) < 1e-4

    def test_unselected_branch_untouched_and_sharing_visible(self):
        tree = two_branch_tree()
        h = build_network(tree, head="softmax", class_count=2, width=6, seed=9)
        rng = np.random.default_rng(13)
        X = rng.normal(size=(16, 2))
        y = rng.integers(0, 2, 16)
        sel0 = SubNetworkSelection({"r": 0}, -1.0)
        sel1 = SubNetworkSelection({"r": 1}, -2.0)
        branch1_before = {
            k: v.copy() for k, v in h.params.items() if "|r/1/" in k
        }
        head_before = h.params["w|head|site:r"].copy()
        out1_before = forward(h, sel1, X)
        train_step(h, sel0, X, y, optimizer=AdamState(lr=0.05))
        for key, value in branch1_before.items():
            assert np.array_equal(value, h.params[key])
        # the head is shared by both selections, so selection 1 sees the update
        assert not np.array_equal(head_before, h.params["w|head|site:r"])
        assert not np.allclose(out1_before, forward(h, sel1, X))

    def test_nonfinite_loss_raises(self):
        tree = leaf({0}, "r", score=0.0)
        h = build_network(tree, head="gaussian", seed=10)
        h.params["w|head|gather:r"][:] = np.nan
        with pytest.raises(nnet.NonFiniteLossError):
            train_step(
                h,
                SubNetworkSelection({}, 0.0),
                np.ones((4, 1)),
                np.ones(4),
                loss="gaussian-nll",
                optimizer=AdamState(),
            )

    def test_batch_index_carried_by_train_loop(self):
        tree = leaf({0}, "r", score=0.0)
        h = build_network(tree, head="gaussian", seed=11)
        h.params["w|head|gather:r"][:] = np.nan
        with pytest.raises(nnet.NonFiniteLossError) as info:
            nnet.train_network(
                h, tree, np.ones((8, 1)), np.ones(8), epochs=1, batch_size=4,
                loss="gaussian-nll",
            )
        assert info.value.batch_index is not None


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        tree = decomposed_tree()
        h = build_network(tree, head="softmax", class_count=3, width=6, seed=12)
        rng = np.random.default_rng(14)
        sel = uniform_selection(tree, rng)
        train_step(
            h, sel, rng.normal(size=(8, 4)), rng.integers(0, 3, 8),
            optimizer=AdamState(lr=0.01),
        )
        path = tmp_path / "w.npz"
        save_weights(h, path, meta={"width": 6})
        h2 = build_network(tree, head="softmax", class_count=3, width=6, seed=99)
        meta = load_weights(h2, path)
        assert meta == {"width": 6}
        for key in h.params:
            assert np.array_equal(h.params[key], h2.params[key])
        for lid in h.bn_stats:
            for stat in ("mean", "var"):
                assert np.array_equal(h.bn_stats[lid][stat], h2.bn_stats[lid][stat])

    def test_shape_mismatch_rejected(self, tmp_path):
        h = build_network(two_branch_tree(), head="softmax", class_count=2, width=4)
        path = tmp_path / "w.npz"
        save_weights(h, path)
        other = build_network(two_branch_tree(), head="softmax", class_count=2, width=5)
        with pytest.raises(NetworkError):
            load_weights(other, path)


def test_uniform_selection_covers_reachable_sites():
    tree = two_branch_tree()
    rng = np.random.default_rng(15)
    sel = uniform_selection(tree, rng)
    assert set(sel.choices) == {"r"}
    assert sel.total_score in (-1.0, -2.0)


def test_parameter_count_is_total_size():
    h = build_network(two_branch_tree(), head="softmax", class_count=2, width=4)
    assert h.parameter_count() == sum(p.size for p in h.params.values())
