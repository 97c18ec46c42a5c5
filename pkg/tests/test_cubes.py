import numpy as np
import pytest

from eqpart.cubes import (
    build_cube_tree,
    envelope_violations,
    neighbor_pairs,
    tree_to_json,
    verify_cube_axioms,
)
from eqpart.errors import ResolutionTooCoarseError
from eqpart.spaces import build_interval, build_plus_sign


def test_single_generation_hand_run():
    # 16 midpoint atoms at delta=1/4: greedy net gives 4 centers and the
    # nearest-center cells carry masses 4/16, 6/16, 4/16, 2/16
    space = build_interval(16)
    tree = build_cube_tree(space, 0.25, k_min=1, k_max=1)
    assert tree.center_ids[1].tolist() == [0, 7, 11, 15]
    assert tree.measures[1].tolist() == [0.25, 0.375, 0.25, 0.125]
    assert tree.a1_hat <= 1.0 + 0.25 / 0.75 + 1e-12  # 1 + delta/(1-delta)
    assert tree.a0_hat > 0


def test_generation_masses_sum_to_one(small_spaces):
    for space in small_spaces.values():
        tree = build_cube_tree(space, 0.25)
        for k in tree.generations:
            assert float(tree.measures[k].sum()) == pytest.approx(1.0, abs=1e-9)


def test_nesting_is_exact(small_spaces):
    space = small_spaces["gasket"]
    tree = build_cube_tree(space, 0.25)
    for k in range(tree.k_min + 1, tree.k_max + 1):
        assert np.array_equal(tree.labels[k - 1], tree.parent_index[k][tree.labels[k]])
        # a parent's atom set is exactly the disjoint union of its children's
        for alpha in range(tree.cube_count(k - 1)):
            kids = tree.children_of(k - 1, alpha)
            union = np.concatenate([tree.cube_atoms(kk, a) for kk, a in kids])
            assert np.array_equal(np.sort(union), np.sort(tree.cube_atoms(k - 1, alpha)))


@pytest.mark.parametrize("kind", ["interval", "square", "sphere", "gasket", "plus"])
def test_axioms_hold_on_every_builder(kind, small_spaces):
    report = verify_cube_axioms(build_cube_tree(small_spaces[kind], 0.25))
    assert report.all_ok
    assert report.a0_hat > 0
    assert report.ratio < 20


def test_ball_sandwich_brute_force():
    # every atom of a cell within a1*delta^k of its center; every atom within
    # a0*delta^k of a center belongs to that cell
    space = build_interval(512)
    tree = build_cube_tree(space, 0.25)
    for k in tree.generations:
        scale = tree.scale(k)
        for alpha in range(tree.cube_count(k)):
            z = int(tree.center_ids[k][alpha])
            d = space.dists_from(z)
            atoms = tree.cube_atoms(k, alpha)
            assert d[atoms].max() <= tree.a1_hat * scale * (1 + 1e-12)
            inside = np.nonzero(d < tree.a0_hat * scale)[0]
            assert np.all(tree.labels[k][inside] == alpha)


def test_measure_bounds_against_fitted_constants(small_spaces):
    # c1 (a0 d^k)^d <= mu(Q) <= c2 (a1 d^k)^d with a factor-2 allowance for
    # scales outside the probed window
    from eqpart.spaces import default_regularity_probe

    space = small_spaces["interval"]
    tree = build_cube_tree(space, 0.25)
    rep = default_regularity_probe(space, exponent=1.0)
    d = space.d_hint
    for k in tree.generations:
        scale = tree.scale(k)
        lo = rep.c1_hat * (tree.a0_hat * scale) ** d / 2
        hi = rep.c2_hat * (tree.a1_hat * scale) ** d * 2
        mu = tree.measures[k]
        assert np.all(mu >= np.minimum(lo, 1.0) - 1e-12)
        assert np.all(mu <= np.minimum(hi, 1.0) + 1e-12)


def test_neighbor_pairs_chain_on_interval():
    # the four generation-1 cells of a deeper tree form a chain in the
    # overlap graph
    tree = build_cube_tree(build_interval(4096), 0.25, k_min=1, k_max=3)
    pairs = {tuple(p) for p in neighbor_pairs(tree, 1).tolist()}
    x = tree.space.positions[tree.center_ids[1], 0]
    order = np.argsort(x)
    for a, b in zip(order, order[1:]):
        lo, hi = min(a, b), max(a, b)
        assert (lo, hi) in pairs


def test_single_cube_generation_has_no_pairs():
    tree = build_cube_tree(build_interval(256), 0.25)
    assert tree.cube_count(tree.k_min) == 1
    assert len(neighbor_pairs(tree, tree.k_min)) == 0


@pytest.mark.parametrize("kind", ["interval", "gasket", "plus"])
def test_envelope_bound_zero_violations(kind, small_spaces):
    # a cell plus its graph neighbors stays within 3*a1*delta^k of its center
    tree = build_cube_tree(small_spaces[kind], 0.25)
    for k in tree.generations:
        violations, worst = envelope_violations(tree, k)
        assert violations == 0
        assert worst <= 1.0


def test_ratio_stable_under_refinement():
    r1 = verify_cube_axioms(build_cube_tree(build_interval(1024), 0.25)).ratio
    r2 = verify_cube_axioms(build_cube_tree(build_interval(4096), 0.25)).ratio
    assert r2 / r1 < 2.0 and r1 / r2 < 2.0


def test_tree_rejects_too_deep_range():
    with pytest.raises(ResolutionTooCoarseError):
        build_cube_tree(build_interval(64), 0.25, k_min=0, k_max=8)


def test_tree_json_schema():
    tree = build_cube_tree(build_interval(64), 0.25)
    doc = tree_to_json(tree)
    assert set(doc) == {"delta", "a0_hat", "a1_hat", "generations"}
    gen = doc["generations"][0]
    assert set(gen) == {"k", "cubes"}
    cube = gen["cubes"][0]
    assert set(cube) == {"alpha", "center_id", "atom_ids", "parent"}
    assert cube["parent"] is None  # coarsest generation has no parents
    deeper = doc["generations"][-1]["cubes"][0]
    assert deeper["parent"] is not None
    # per-generation atom ids partition the atom set
    for gen in doc["generations"]:
        ids = sorted(i for cube in gen["cubes"] for i in cube["atom_ids"])
        assert ids == list(range(64))


def test_tree_determinism(small_spaces):
    space = small_spaces["plus"]
    a = build_cube_tree(space, 0.25)
    b = build_cube_tree(space, 0.25)
    for k in a.generations:
        assert np.array_equal(a.labels[k], b.labels[k])
        assert np.array_equal(a.center_ids[k], b.center_ids[k])
