"""Optimal k:1 matching on a scalar score and per-set treatment effects."""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleMatchError, IntegrityError, ValidationError
from .trial_data import HIGHER_IS_BETTER


@dataclass(frozen=True)
class MatchedSet:
    treated_id: object
    control_ids: tuple
    treated_score: float
    control_scores: tuple
    mean_score: float
    effect: float = math.nan

    @property
    def cost(self):
        return sum(abs(c - self.treated_score) for c in self.control_scores)


@dataclass(frozen=True, eq=False)
class EffectSequence:
    """Per-set effects ordered by increasing mean score (benefit-positive)."""

    effects: np.ndarray
    scores: np.ndarray
    sets: tuple

    def __post_init__(self):
        t = np.array(self.effects, dtype=float)
        s = np.array(self.scores, dtype=float)
        if t.ndim != 1 or t.shape != s.shape or t.size < 2:
            raise ValidationError("effects and scores must be equal-length vectors with n >= 2")
        if np.any(np.diff(s) < 0):
            raise ValidationError("scores must be non-decreasing")
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "effects", t)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "sets", tuple(self.sets))

    def __len__(self):
        return self.effects.size

    @classmethod
    def from_effects(cls, effects, scores=None):
        """Build a bare sequence (no matched sets) for direct use of the scan/inference API."""
        effects = np.asarray(effects, dtype=float)
        if scores is None:
            scores = np.arange(effects.size, dtype=float)
        return cls(effects, scores, ())


def _sort_key(p):
    return (p.score, p.patient_id)


def _match_sorted(t_scores, c_scores, k):
    """Non-crossing DP over sorted score lists.

    ``dp[u]`` is the least cost of filling the first ``u`` control slots (slot
    ``u`` belongs to treated ``u // k``) using the controls seen so far.
    Returns, for each treated position, the list of control positions.
    """
    m, c = len(t_scores), len(c_scores)
    K = k * m
    slot_owner = np.repeat(np.asarray(t_scores, dtype=float), k)
    dp = np.full(K + 1, np.inf)
    dp[0] = 0.0
    take = np.zeros((c, K), dtype=bool)
    for j in range(c):
        cand = dp[:-1] + np.abs(c_scores[j] - slot_owner)
        better = cand < dp[1:]
        take[j] = better
        dp[1:] = np.where(better, cand, dp[1:])
    groups = [[] for _ in range(m)]
    u = K
    for j in range(c - 1, -1, -1):
        if u == 0:
            break
        if take[j, u - 1]:
            groups[(u - 1) // k].append(j)
            u -= 1
    if u != 0:
        raise AssertionError("matching backtrack did not fill every slot")
    return [g[::-1] for g in groups], float(dp[K])


def optimal_match(controls, treated, k=1, drop_surplus_treated=False):
    """Assign ``k`` distinct controls to every treated patient at least total |score gap|.

    Exact for scalar scores: both arms are sorted and an optimal non-crossing
    assignment is found by dynamic programming. Surplus controls are left
    unmatched. With ``k == 1`` and more treated than controls,
    ``drop_surplus_treated=True`` instead matches every control and leaves the
    surplus treated unmatched.
    """
    if k < 1:
        raise ValidationError("k must be at least 1")
    controls = sorted(controls, key=_sort_key)
    treated = sorted(treated, key=_sort_key)
    if not treated:
        raise ValidationError("no treated patients to match")
    deficit = k * len(treated) - len(controls)
    if deficit > 0:
        if drop_surplus_treated and k == 1:
            groups, _ = _match_sorted([p.score for p in controls], [p.score for p in treated], 1)
            pairs = [(treated[g[0]], c) for c, g in zip(controls, groups)]
            return [_make_set(t, [c]) for t, c in pairs]
        raise InfeasibleMatchError(
            f"{len(controls)} controls cannot supply {k} per treated patient for "
            f"{len(treated)} treated (short by {deficit})",
            deficit,
        )
    groups, _ = _match_sorted([p.score for p in treated], [p.score for p in controls], k)
    return [_make_set(t, [controls[j] for j in g]) for t, g in zip(treated, groups)]


def _make_set(t, cs):
    cscores = tuple(c.score for c in cs)
    mean = (t.score + sum(cscores)) / (len(cs) + 1)
    return MatchedSet(t.patient_id, tuple(c.patient_id for c in cs), t.score, cscores, mean)


def total_cost(sets):
    return sum(s.cost for s in sets)


def compute_effects(sets, dataset):
    """Per-set effect oriented so that positive means the treated patient fared better.

    Sets are returned ordered by mean score, ties by treated id.
    """
    row = dataset.index_of()
    y = dataset.outcomes
    sign = 1.0 if dataset.outcome_direction == HIGHER_IS_BETTER else -1.0
    out = []
    for s in sets:
        try:
            yt = y[row[s.treated_id]]
            yc = [y[row[c]] for c in s.control_ids]
        except KeyError as exc:
            raise IntegrityError(f"matched set refers to unknown patient {exc.args[0]!r}") from None
        d = yt - sum(yc) / len(yc)
        out.append(replace(s, effect=sign * d + 0.0))
    out.sort(key=lambda s: (s.mean_score, s.treated_id))
    return EffectSequence([s.effect for s in out], [s.mean_score for s in out], out)


def write_matched_sets_csv(sets, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["treated_id", "control_ids", "mean_score", "effect"])
        for s in sets:
            w.writerow([s.treated_id, ";".join(str(c) for c in s.control_ids),
                        repr(float(s.mean_score)), repr(float(s.effect))])
    return path
