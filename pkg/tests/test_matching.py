import numpy as np
import pytest

from sweetspot.errors import InfeasibleMatchError, IntegrityError, ValidationError
from sweetspot.matching import EffectSequence, compute_effects, optimal_match, total_cost
from sweetspot.predilection import ScoredPatient
from sweetspot.trial_data import HIGHER_IS_BETTER, TrialDataset

from conftest import brute_force_match_cost


def scored(prefix, scores):
    return [ScoredPatient(f"{prefix}{k}", float(s), "test") for k, s in enumerate(scores)]


def dataset(treated, outcomes, direction="higher_is_worse", kind="binary"):
    n = len(treated)
    return TrialDataset([f"p{k}" for k in range(n)], np.zeros((n, 1)), np.array(treated, dtype=bool),
                        np.array(outcomes, dtype=float), kind, direction, ("x",))


def test_exact_score_match_wins():
    sets = optimal_match(scored("c", [-4.21, 0.0]), scored("t", [-4.21]))
    assert len(sets) == 1
    assert sets[0].control_ids == ("c0",)
    assert sets[0].cost == 0.0


def test_identical_groups_pair_in_order():
    s = [3.0, -1.0, 0.5, 2.0]
    sets = optimal_match(scored("c", s), scored("t", s))
    assert total_cost(sets) == 0.0
    for m in sets:
        assert m.treated_score == m.control_scores[0]


@pytest.mark.parametrize("k", [1, 2])
def test_matches_brute_force(rng, k):
    for _ in range(100):
        n_t = int(rng.integers(1, 5 if k == 1 else 4))
        n_c = int(rng.integers(k * n_t, 9))
        if rng.random() < 0.3:
            t = rng.integers(-3, 4, size=n_t).astype(float)
            c = rng.integers(-3, 4, size=n_c).astype(float)
        else:
            t, c = rng.normal(size=n_t), rng.normal(size=n_c)
        sets = optimal_match(scored("c", c), scored("t", t), k)
        assert len(sets) == n_t
        assert all(len(s.control_ids) == k for s in sets)
        used = [cid for s in sets for cid in s.control_ids]
        assert len(used) == len(set(used))
        assert total_cost(sets) == pytest.approx(brute_force_match_cost(t, c, k), abs=1e-12)


def test_assignment_is_non_crossing(rng):
    sets = optimal_match(scored("c", rng.normal(size=60)), scored("t", rng.normal(size=20)), 2)
    sets.sort(key=lambda s: s.treated_score)
    for a, b in zip(sets, sets[1:]):
        assert max(a.control_scores) <= min(b.control_scores)


def test_infeasible_reports_deficit():
    with pytest.raises(InfeasibleMatchError) as err:
        optimal_match(scored("c", [0, 1, 2]), scored("t", [0, 1]), k=2)
    assert err.value.deficit == 1
    assert "short by 1" in str(err.value)


def test_surplus_treated_dropped_when_requested():
    sets = optimal_match(scored("c", [0.0, 5.0]), scored("t", [0.1, 4.9, 9.0]), drop_surplus_treated=True)
    assert sorted(s.treated_id for s in sets) == ["t0", "t1"]


def test_bad_k():
    with pytest.raises(ValidationError):
        optimal_match(scored("c", [0.0]), scored("t", [0.0]), k=0)


def one_pair(yc, yt, **kw):
    # a second pair far up the score axis keeps the sequence at the minimum length of two
    ds = dataset([False, True, False, True], [yc, yt, 0, 0], **kw)
    sets = optimal_match([ScoredPatient("p0", 0.0, "t"), ScoredPatient("p2", 9.0, "t")],
                         [ScoredPatient("p1", 0.0, "t"), ScoredPatient("p3", 9.0, "t")])
    return compute_effects(sets, ds).effects[0]


def test_effect_signs_for_mortality():
    assert one_pair(0, 1) == -1.0
    assert one_pair(1, 0) == 1.0
    assert one_pair(1, 1) == 0.0
    assert one_pair(0, 0) == 0.0


def test_effect_sign_when_higher_is_better():
    assert one_pair(0.0, 2.5, direction=HIGHER_IS_BETTER, kind="continuous") == 2.5


def test_binary_k1_effects_in_three_values(rng):
    n = 40
    treated = rng.random(n) < 0.5
    ds = dataset(treated, rng.integers(0, 2, size=n))
    ids = np.array(ds.ids, dtype=object)
    s = rng.normal(size=n)
    sets = optimal_match(
        [ScoredPatient(i, v, "t") for i, v in zip(ids[~treated], s[~treated])],
        [ScoredPatient(i, v, "t") for i, v in zip(ids[treated], s[treated])],
        drop_surplus_treated=True,
    )
    seq = compute_effects(sets, ds)
    assert set(np.unique(seq.effects)) <= {-1.0, 0.0, 1.0}
    assert np.all(np.diff(seq.scores) >= 0)


def test_binary_k2_effect_values():
    ds = dataset([False, False, True, False, False, True], [1, 0, 0, 0, 0, 1])
    controls = [ScoredPatient(f"p{k}", v, "t") for k, v in ((0, 0.0), (1, 0.1), (3, 9.0), (4, 9.1))]
    sets = optimal_match(controls, [ScoredPatient("p2", 0.05, "t"), ScoredPatient("p5", 9.05, "t")], k=2)
    assert list(compute_effects(sets, ds).effects) == [0.5, -1.0]


def test_dangling_reference():
    ds = dataset([False, True], [0, 1])
    sets = optimal_match([ScoredPatient("ghost", 0.0, "t")], [ScoredPatient("p1", 0.0, "t")])
    with pytest.raises(IntegrityError):
        compute_effects(sets, ds)


def test_sequence_contract():
    with pytest.raises(ValidationError):
        EffectSequence.from_effects([1.0])
    with pytest.raises(ValidationError):
        EffectSequence.from_effects([1.0, 2.0], [1.0, 0.0])
