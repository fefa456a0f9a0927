"""Action enumeration, moment embeddings, and max-margin training."""

import math

import numpy as np
import pytest

from langnav.config import default_config
from langnav.errors import DimensionError, ModelNotFound, UsageError
from langnav.policy import (
    D,
    FEATURE_NAMES,
    STOP,
    Action,
    DemonstrationExample,
    PolicyWeights,
    cost,
    dagger_train,
    dataset_loss,
    embed,
    enumerate_actions,
    expert_agreement,
    hinge_loss,
    landmark_features,
    moment_blocks,
    resolve_target,
    select_action,
    sgd_update,
    subgradient,
    train_weights,
)
from langnav.rbpf import Particle
from langnav.semantic_map import SemanticGraph

CFG = default_config()
LOCATIONS = tuple(CFG["vocabulary"]["location_types"])

F = {name: i for i, name in enumerate(FEATURE_NAMES)}


def straight(a, b):
    return [tuple(a), tuple(b)]


def make_particle(weight=1.0, objs=(), seed=0):
    """Particle with an anchor pose at the origin and the given objects,
    each objs entry (object_id, class, xy)."""
    g = SemanticGraph(list(LOCATIONS))
    anchor = g.add_anchor_pose((0.0, 0.0), 1e-3)
    p = Particle(g, np.random.default_rng(seed), weight)
    p.robot_node = anchor.node_id
    for oid, cls, xy in objs:
        node = g.add_object_node(anchor.node_id, np.asarray(xy, float),
                                 np.eye(2) * 1e-4, cls, source=oid)
        p.obj_nodes[oid] = node.node_id
    return p


def add_hypothesis(p, key, cls, xy, role="fig"):
    node = p.graph.add_hypothesis_node(tuple(xy), 1.0, cls, source=key,
                                       kind="object")
    fig, lm = p.applied.get(key, (None, None))
    if role == "fig":
        p.applied[key] = (node.node_id, lm)
    else:
        p.applied[key] = (fig, node.node_id)
    return node.node_id


def nav(key, xy, cls, path=None, existence=1.0):
    path = path if path is not None else ((0.0, 0.0), tuple(xy))
    return Action(kind="navigate", key=key, target_xy=tuple(xy),
                  path=tuple(path), existence=existence, cls=cls)


# ---------------------------------------------------------------------------
# path geometry and per-sample features


def test_straight_path_distance_delta():
    p = make_particle(objs=[("a", "hydrant", (5.0, 0.0))])
    action = nav("obj:a", (5.0, 0.0), "hydrant")
    phi = landmark_features((0.0, 0.0), action, p, scale=1.0)
    assert phi[F["dist_start"]] == pytest.approx(5.0, abs=1e-6)
    assert phi[F["dist_end"]] == pytest.approx(0.0, abs=1e-6)
    assert phi[F["dist_delta"]] == pytest.approx(-5.0, abs=1e-6)
    assert phi[F["path_length"]] == pytest.approx(5.0, abs=1e-9)


def test_l_shaped_path_turn_features():
    p = make_particle(objs=[("a", "hydrant", (1.0, 1.0))])
    path = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0))
    action = nav("obj:a", (1.0, 1.0), "hydrant", path=path)
    phi = landmark_features((0.0, 0.0), action, p, scale=10.0)
    assert phi[F["path_length"]] == pytest.approx(0.2)
    assert phi[F["turn_total"]] == pytest.approx(0.5)   # pi/2 over pi
    assert phi[F["turn_net"]] == pytest.approx(0.5)


def test_opposing_turns_cancel_in_net():
    p = make_particle(objs=[("a", "hydrant", (3.0, 0.0))])
    path = ((0.0, 0.0), (1.0, 0.0), (2.0, 1.0), (3.0, 0.0))
    action = nav("obj:a", (3.0, 0.0), "hydrant", path=path)
    phi = landmark_features((0.0, 0.0), action, p)
    # 45 degrees left then 90 degrees right: total 135, net -45
    assert phi[F["turn_total"]] == pytest.approx(0.75)
    assert phi[F["turn_net"]] == pytest.approx(-0.25)


def test_heading_wrap_keeps_small_turn():
    p = make_particle(objs=[("a", "hydrant", (0.0, 0.0))])
    a1 = math.radians(170.0)
    a2 = math.radians(-170.0)
    path = ((0.0, 0.0),
            (math.cos(a1), math.sin(a1)),
            (math.cos(a1) + math.cos(a2), math.sin(a1) + math.sin(a2)))
    action = nav("obj:a", (0.0, 0.0), "hydrant", path=path)
    phi = landmark_features((0.0, 0.0), action, p)
    assert phi[F["turn_total"]] == pytest.approx(20.0 / 180.0)


def test_degenerate_paths_zero_turn_features():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0))])
    for path in ((), ((0.0, 0.0),), ((0.0, 0.0), (0.0, 0.0))):
        action = nav("obj:a", (2.0, 0.0), "hydrant", path=path)
        phi = landmark_features((0.0, 0.0), action, p)
        assert phi[F["path_length"]] == 0.0
        assert phi[F["turn_total"]] == 0.0
        assert phi[F["turn_net"]] == 0.0


def test_stop_features_distance_to_figure():
    p = make_particle(objs=[("a", "hydrant", (3.0, 4.0))])
    fig = p.obj_nodes["a"]
    phi = landmark_features((0.0, 0.0), STOP, p, behavior_figure=fig,
                            scale=10.0)
    assert phi[F["stop"]] == 1.0
    assert phi[F["stop_dist_figure"]] == pytest.approx(0.5, abs=1e-6)
    mask = np.ones(D, bool)
    mask[[F["stop"], F["stop_dist_figure"]]] = False
    assert np.all(phi[mask] == 0.0)


def test_stop_without_figure_is_pure_indicator():
    p = make_particle()
    phi = landmark_features((0.0, 0.0), STOP, p)
    assert phi[F["stop"]] == 1.0
    assert np.count_nonzero(phi) == 1


def test_absent_target_zeroes_landmark_block():
    p = make_particle()   # no objects at all
    action = nav("obj:ghost", (4.0, 0.0), "hydrant",
                 path=((0.0, 0.0), (2.0, 0.0), (2.0, 2.0)))
    phi = landmark_features((0.0, 0.0), action, p)
    assert phi[F["absent_target"]] == 1.0
    assert phi[F["path_length"]] > 0.0          # path features survive
    assert phi[F["dist_start"]] == 0.0
    assert phi[F["dist_end"]] == 0.0
    assert phi[F["class_structure"]] == 0.0
    assert phi[F["existence"]] == 0.0


def test_absent_key_falls_back_to_same_class_node():
    p = make_particle(objs=[("other", "hydrant", (4.5, 0.0)),
                            ("far", "hydrant", (20.0, 0.0))])
    action = nav("obj:ghost", (5.0, 0.0), "hydrant")
    phi = landmark_features((0.0, 0.0), action, p, scale=1.0)
    assert phi[F["absent_target"]] == 0.0
    assert phi[F["dist_start"]] == pytest.approx(4.5, abs=1e-6)
    assert phi[F["class_structure"]] == 1.0


def test_class_buckets():
    cases = [("hydrant", "class_structure"), ("box", "class_container"),
             ("ball", "class_portable"), ("gizmo", "class_other")]
    for cls, bucket in cases:
        p = make_particle(objs=[("a", cls, (2.0, 0.0))])
        action = nav("obj:a", (2.0, 0.0), cls)
        phi = landmark_features((0.0, 0.0), action, p,
                                location_labels=LOCATIONS)
        assert phi[F[bucket]] == 1.0, cls
        others = [b for _, b in cases if b != bucket] + ["class_place"]
        assert all(phi[F[b]] == 0.0 for b in others)


def test_behavior_figure_indicator():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0)),
                            ("b", "cone", (0.0, 2.0))])
    action = nav("obj:a", (2.0, 0.0), "hydrant")
    on = landmark_features((0.0, 0.0), action, p,
                           behavior_figure=p.obj_nodes["a"])
    off = landmark_features((0.0, 0.0), action, p,
                            behavior_figure=p.obj_nodes["b"])
    assert on[F["behavior_figure"]] == 1.0
    assert off[F["behavior_figure"]] == 0.0


def test_hypothesized_flag_and_existence_passthrough():
    p = make_particle()
    add_hypothesis(p, "k0", "ball", (3.0, 0.0))
    action = nav("hyp:k0:fig", (3.0, 0.0), "ball", existence=0.4)
    phi = landmark_features((0.0, 0.0), action, p)
    assert phi[F["hypothesized"]] == 1.0
    assert phi[F["existence"]] == pytest.approx(0.4)
    assert phi[F["class_portable"]] == 1.0


# ---------------------------------------------------------------------------
# moment embedding


def moments_oracle(phis, weights, k_max):
    """Brute-force weighted mean and central moments, element by element."""
    weights = np.asarray(weights, float) / np.sum(weights)
    n, d = phis.shape
    mean = np.zeros(d)
    for i in range(n):
        mean += weights[i] * phis[i]
    blocks = [mean]
    for k in range(2, k_max + 1):
        mom = np.zeros(d)
        for i in range(n):
            mom += weights[i] * (phis[i] - mean) ** k
        blocks.append(mom)
    return np.concatenate(blocks)


def test_moment_blocks_match_bruteforce_oracle():
    rng = np.random.default_rng(42)
    for _ in range(40):
        n = rng.integers(1, 100)
        d = rng.integers(1, 12)
        k = rng.integers(1, 5)
        phis = rng.normal(size=(n, d)) * rng.uniform(0.1, 10.0)
        weights = rng.uniform(0.01, 1.0, size=n)
        got = moment_blocks(phis, weights, int(k))
        want = moments_oracle(phis, weights, int(k))
        assert got.shape == (k * d,)
        np.testing.assert_allclose(got, want, atol=1e-12, rtol=1e-12)


def test_single_particle_second_moment_zero():
    p = make_particle(objs=[("a", "hydrant", (4.0, 1.0))])
    action = nav("obj:a", (4.0, 1.0), "hydrant")
    emb = embed(action, [p], (0.0, 0.0), moments=2)
    assert emb.shape == (2 * D,)
    assert np.all(emb[D:] == 0.0)
    assert emb[F["dist_start"]] > 0.0


def test_two_point_moments_mean_one_var_one():
    phis = np.zeros((2, 3))
    phis[1, 1] = 2.0
    emb = moment_blocks(phis, [0.5, 0.5], 2)
    assert emb[1] == pytest.approx(1.0)
    assert emb[3 + 1] == pytest.approx(1.0)
    assert emb[0] == emb[2] == 0.0


def test_embed_resolves_target_per_particle():
    p1 = make_particle(weight=0.5, objs=[("a", "hydrant", (2.0, 0.0))])
    p2 = make_particle(weight=0.5, objs=[("a", "hydrant", (6.0, 0.0))])
    action = nav("obj:a", (2.0, 0.0), "hydrant")
    emb = embed(action, [p1, p2], (0.0, 0.0), moments=2, scale=1.0)
    assert emb[F["dist_start"]] == pytest.approx(4.0, abs=1e-6)
    spread = emb[D + F["dist_start"]]
    assert spread == pytest.approx(4.0, abs=1e-5)   # var of {2, 6}


def test_zero_total_weight_rejected():
    with pytest.raises(DimensionError):
        moment_blocks(np.zeros((2, 3)), [0.0, 0.0], 2)


# ---------------------------------------------------------------------------
# enumeration


def test_enumerate_empty_map_yields_stop_only():
    p = make_particle()
    actions = enumerate_actions([p], (0.0, 0.0), straight)
    assert len(actions) == 1
    assert actions[0].is_stop()


def test_enumerate_orders_by_existence_and_appends_stop():
    p1 = make_particle(weight=0.5, objs=[("a", "hydrant", (2.0, 0.0))])
    p2 = make_particle(weight=0.5, objs=[("a", "hydrant", (2.1, 0.0))])
    add_hypothesis(p1, "k0", "ball", (5.0, 0.0))
    actions = enumerate_actions([p1, p2], (0.0, 0.0), straight)
    keys = [a.key for a in actions]
    assert keys == ["obj:a", "hyp:k0:fig", None]
    assert actions[0].existence == pytest.approx(1.0)
    assert actions[1].existence == pytest.approx(0.5)
    assert actions[-1].is_stop()


def test_enumerate_skips_unreachable_targets():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0)),
                            ("b", "cone", (0.0, 2.0))])

    def planner(frm, to):
        if to[1] > 1.0:
            raise RuntimeError("blocked")
        return [frm, to]

    keys = [a.key for a in enumerate_actions([p], (0.0, 0.0), planner)]
    assert "obj:a" in keys
    assert "obj:b" not in keys


def test_enumerate_labeled_region_target():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0))])
    rid = p.graph.region_of[p.robot_node]
    for _ in range(5):
        p.graph.add_label_factor(rid, ("scene", "kitchen"))
    actions = enumerate_actions([p], (0.0, 0.0), straight)
    keys = [a.key for a in actions]
    assert "region:kitchen:0" in keys
    region_action = actions[keys.index("region:kitchen:0")]
    assert region_action.existence == pytest.approx(1.0)
    res = resolve_target(p, region_action)
    assert res is not None and res.region == rid


def test_enumerate_ignores_generic_regions():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0))])
    keys = [a.key for a in enumerate_actions([p], (0.0, 0.0), straight)]
    assert not any(k and k.startswith("region:") for k in keys)


def test_enumerate_skips_bound_hypothesis_keys():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0))])
    p.applied["k0"] = (p.obj_nodes["a"], None)   # annotation bound to a
    keys = [a.key for a in enumerate_actions([p], (0.0, 0.0), straight)]
    assert keys == ["obj:a", None]


def test_resolve_region_by_label_and_ordinal():
    p = make_particle()
    g = p.graph
    rid0 = g.region_of[p.robot_node]
    far = g.add_pose_node(p.robot_node, (8.0, 0.0), np.eye(2) * 1e-4, 0.0)
    rid1 = g.split_region(rid0, [far.node_id]).region_id
    for rid in (rid0, rid1):
        for _ in range(5):
            g.add_label_factor(rid, ("scene", "hallway"))
    a0 = resolve_target(p, Action(kind="navigate", key="region:hallway:0"))
    a1 = resolve_target(p, Action(kind="navigate", key="region:hallway:1"))
    assert a0.region == rid0 and a1.region == rid1     # centroid order
    assert a0.xy[0] < a1.xy[0]
    missing = resolve_target(p, Action(kind="navigate", key="region:hallway:2"))
    assert missing is None


# ---------------------------------------------------------------------------
# cost and selection


def test_cost_is_inner_product_and_checks_dimension():
    w = np.arange(4, dtype=float)
    f = np.array([1.0, 0.5, 0.0, 2.0])
    assert cost(w, f) == pytest.approx(6.5)
    with pytest.raises(DimensionError):
        cost(np.zeros(3), f)


def test_select_prefers_earlier_action_on_ties():
    p = make_particle(objs=[("a", "hydrant", (2.0, 0.0))])
    actions = enumerate_actions([p], (0.0, 0.0), straight)
    embs = [embed(a, [p], (0.0, 0.0)) for a in actions]
    picked = select_action(np.zeros(2 * D), actions, embs)
    assert picked.key == "obj:a"        # Stop never wins a tie
    stop_only = [STOP]
    picked = select_action(np.zeros(2 * D), stop_only,
                           [embed(STOP, [p], (0.0, 0.0))])
    assert picked.is_stop()


def test_select_minimizes_cost():
    actions = [nav("obj:a", (1.0, 0.0), "hydrant"),
               nav("obj:b", (2.0, 0.0), "cone"), STOP]
    embs = [np.array([3.0]), np.array([-1.0]), np.array([0.0])]
    assert select_action(np.array([1.0]), actions, embs).key == "obj:b"


# ---------------------------------------------------------------------------
# hinge loss and subgradient


def random_example(rng, dim=8, n_actions=None):
    n = int(n_actions or rng.integers(2, 6))
    emb = rng.normal(size=(n, dim))
    return DemonstrationExample(embeddings=emb,
                                expert_index=int(rng.integers(0, n)))


def test_zero_weights_two_actions_unit_loss():
    rng = np.random.default_rng(0)
    for _ in range(10):
        ex = random_example(rng)
        assert hinge_loss(np.zeros(8), ex, lambda_reg=0.0) == pytest.approx(1.0)
        assert hinge_loss(np.zeros(8), ex) == pytest.approx(1.0)


def test_satisfied_margin_leaves_regularizer_only():
    emb = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    ex = DemonstrationExample(embeddings=emb, expert_index=0)
    w = np.array([1.0, 1.0])
    lam = 0.01
    assert hinge_loss(w, ex, lam) == pytest.approx(0.5 * lam * 2.0)
    np.testing.assert_allclose(subgradient(w, ex, lam), lam * w)


def test_subgradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    lam = 1e-3
    checked = 0
    while checked < 20:
        ex = random_example(rng)
        w = rng.normal(size=8)
        scores = ex.embeddings @ w
        margins = np.ones(len(scores))
        margins[ex.expert_index] = 0.0
        vals = np.sort(scores - margins)
        if vals[1] - vals[0] < 1e-3:
            continue   # need a unique argmin for differentiability
        grad = subgradient(w, ex, lam)
        h = 1e-5
        fd = np.zeros(8)
        for i in range(8):
            e = np.zeros(8)
            e[i] = h
            fd[i] = (hinge_loss(w + e, ex, lam) -
                     hinge_loss(w - e, ex, lam)) / (2.0 * h)
        np.testing.assert_allclose(grad, fd, atol=1e-5)
        checked += 1


def test_hinge_loss_is_convex_in_weights():
    rng = np.random.default_rng(11)
    for _ in range(200):
        ex = random_example(rng)
        w1 = rng.normal(size=8)
        w2 = rng.normal(size=8)
        theta = rng.uniform()
        mix = hinge_loss(theta * w1 + (1 - theta) * w2, ex)
        bound = theta * hinge_loss(w1, ex) + (1 - theta) * hinge_loss(w2, ex)
        assert mix <= bound + 1e-9


def test_expert_example_rejects_bad_index():
    with pytest.raises(UsageError):
        DemonstrationExample(embeddings=np.zeros((3, 4)), expert_index=3)
    with pytest.raises(UsageError):
        DemonstrationExample(embeddings=np.zeros((3, 4)), expert_index=-1)


def test_sgd_schedule_quarter_step():
    w = np.array([1.0, -1.0])
    g = np.array([2.0, 4.0])
    out = sgd_update(w, g, t=4, lr0=0.1, lr_decay=0.5)
    np.testing.assert_allclose(out, w - 0.05 * g)
    out1 = sgd_update(w, g, t=1, lr0=0.1, lr_decay=0.5)
    np.testing.assert_allclose(out1, w - 0.1 * g)


# ---------------------------------------------------------------------------
# training


def separable_example(rng, w_star, dim, n_actions, gap=0.3):
    """Example whose expert is the unique w_star-cost minimizer by > gap."""
    while True:
        emb = rng.normal(size=(n_actions, dim))
        scores = emb @ w_star
        order = np.argsort(scores)
        if scores[order[1]] - scores[order[0]] > gap:
            return DemonstrationExample(embeddings=emb,
                                        expert_index=int(order[0]))


def test_training_fits_separable_dataset():
    rng = np.random.default_rng(3)
    dim = 2 * D
    w_star = rng.normal(size=dim)
    w_star /= np.linalg.norm(w_star)
    data = [separable_example(rng, w_star, dim, 4) for _ in range(60)]
    start = PolicyWeights.fresh(CFG["policy"])
    before = dataset_loss(start.weights, data, start.lambda_reg)
    w, loss, _ = train_weights(data, start, epochs=30, seed=5)
    assert loss < before
    assert expert_agreement(w, data) >= 0.95


def test_dagger_expert_first_then_learner():
    rng_pool = np.random.default_rng(9)
    dim = 2 * D
    w_star = rng_pool.normal(size=dim)
    w_star /= np.linalg.norm(w_star)
    drivers = []

    def rollout(weights, seed):
        drivers.append(weights)
        rng = np.random.default_rng(seed)
        return [separable_example(rng, w_star, dim, 3) for _ in range(4)]

    cfg = dict(CFG["policy"], dagger_iterations=4, episodes_per_iteration=3,
               epochs=15)
    policy, report = dagger_train(rollout, cfg, seed=12)

    assert len(drivers) == 12
    assert all(d is None for d in drivers[:3])          # pure expert first
    assert all(isinstance(d, PolicyWeights) for d in drivers[3:])
    states = [row["states"] for row in report]
    assert states == [12, 24, 36, 48]                   # aggregate grows
    for row in report:
        assert row["loss"] <= row["loss_before"] + 1e-12
    held_out = [separable_example(np.random.default_rng(999), w_star, dim, 3)
                for _ in range(50)]
    assert expert_agreement(policy.weights, held_out) >= 0.9


def test_dagger_is_deterministic():
    dim = 2 * D
    w_star = np.ones(dim) / np.sqrt(dim)

    def rollout(weights, seed):
        rng = np.random.default_rng(seed)
        return [separable_example(rng, w_star, dim, 3) for _ in range(2)]

    cfg = dict(CFG["policy"], dagger_iterations=2, episodes_per_iteration=2,
               epochs=5)
    p1, r1 = dagger_train(rollout, cfg, seed=4)
    p2, r2 = dagger_train(rollout, cfg, seed=4)
    np.testing.assert_array_equal(p1.weights, p2.weights)
    assert r1 == r2
    p3, _ = dagger_train(rollout, cfg, seed=5)
    assert not np.array_equal(p1.weights, p3.weights)


# ---------------------------------------------------------------------------
# weight persistence


def test_weights_roundtrip(tmp_path):
    w = PolicyWeights.fresh(CFG["policy"])
    w.weights = np.linspace(-1.0, 1.0, len(w.weights))
    path = tmp_path / "w.json"
    w.save(str(path))
    back = PolicyWeights.load(str(path))
    np.testing.assert_allclose(back.weights, w.weights)
    assert back.moments == w.moments
    assert back.feature_scale == w.feature_scale
    assert back.feature_names == FEATURE_NAMES


def test_weights_manifest_guard(tmp_path):
    import json

    w = PolicyWeights.fresh(CFG["policy"])
    path = tmp_path / "w.json"
    w.save(str(path))
    payload = json.loads(path.read_text())
    payload["feature_names"][0] = "renamed"
    path.write_text(json.dumps(payload))
    with pytest.raises(UsageError):
        PolicyWeights.load(str(path))
    with pytest.raises(ModelNotFound):
        PolicyWeights.load(str(tmp_path / "missing.json"))
