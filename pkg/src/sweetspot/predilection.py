"""Baseline-risk (predilection) score models fitted on the control arm.

Control patients are scored out-of-fold so that no control's score comes from
a model that saw its outcome; treated patients are scored by one model fitted
on every control.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from ._rng import substream
from .errors import DegenerateFitError, SchemaError, ValidationError

LOGISTIC = "logistic"
LINEAR = "linear"
DEFAULT_RIDGE = 1e-6

PREVALIDATED = "prevalidated"
FULL = "full"
EXTERNAL = "external"


@dataclass(frozen=True, eq=False)
class PredilectionModel:
    link: str
    intercept: float
    coefficients: np.ndarray
    ridge_penalty: float = DEFAULT_RIDGE
    converged: bool = True
    n_iterations: int = 0
    covariate_names: tuple = ()
    objective_trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.link not in (LOGISTIC, LINEAR):
            raise ValidationError(f"unknown link {self.link!r}")
        coef = np.array(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(coef)) or not np.isfinite(self.intercept):
            raise ValidationError("model coefficients must be finite")
        coef.flags.writeable = False
        object.__setattr__(self, "coefficients", coef)
        names = tuple(self.covariate_names) or tuple(f"x{k + 1}" for k in range(coef.size))
        object.__setattr__(self, "covariate_names", names)

    def linear_predictor(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.coefficients.size:
            raise ValidationError(
                f"model expects {self.coefficients.size} covariates, got {X.shape[1]}"
            )
        return self.intercept + X @ self.coefficients

    def predict(self, X):
        eta = self.linear_predictor(X)
        return expit(eta) if self.link == LOGISTIC else eta

    def odds_ratios(self):
        if self.link != LOGISTIC:
            raise ValueError("odds ratios are only defined for the logistic link")
        return dict(zip(("intercept",) + self.covariate_names,
                        np.exp(np.r_[self.intercept, self.coefficients]).tolist()))

    def to_json(self):
        return {
            "link": self.link,
            "intercept": float(self.intercept),
            "coefficients": dict(zip(self.covariate_names, self.coefficients.tolist())),
            "ridge_penalty": float(self.ridge_penalty),
        }

    @classmethod
    def from_json(cls, doc, covariate_names=None):
        """Rebuild a model; ``covariate_names`` reorders coefficients to match a dataset."""
        try:
            coefs = doc["coefficients"]
            names = list(coefs) if covariate_names is None else list(covariate_names)
            missing = [n for n in names if n not in coefs]
            if missing:
                raise SchemaError(f"model has no coefficient for covariate(s) {missing}")
            return cls(
                link=doc["link"],
                intercept=float(doc["intercept"]),
                coefficients=np.array([float(coefs[n]) for n in names]),
                ridge_penalty=float(doc.get("ridge_penalty", 0.0)),
                covariate_names=tuple(names),
            )
        except KeyError as exc:
            raise SchemaError(f"model JSON missing field {exc}") from None


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_json(), indent=2) + "\n", encoding="utf-8")


def load_model(path, covariate_names=None):
    return PredilectionModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")), covariate_names)


def _penalized_loglik(eta, y, beta, lam):
    # sum y*eta - log(1 + e^eta), stable for large |eta|
    ll = np.sum(y * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * lam * float(beta @ beta)


def fit_glm(X, y, link=LOGISTIC, ridge_penalty=DEFAULT_RIDGE, max_iter=100, tol=1e-8,
            covariate_names=(), intercept_only_fallback=False):
    """Fit a ridge-penalized GLM with an unpenalized intercept.

    The logistic link is fitted by iteratively reweighted least squares (Newton
    steps with step halving, so the penalized log-likelihood never decreases);
    the linear link by penalized least squares.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like, shape (n,)
        0/1 outcomes for the logistic link.
    ridge_penalty : float
        Penalty ``lam`` in ``loglik - lam/2 * ||beta||^2``.
    max_iter, tol : int, float
        Stop when the largest absolute coefficient change is below ``tol``
        or after ``max_iter`` Newton iterations.
    intercept_only_fallback : bool
        With a logistic link and a single observed outcome class, return an
        intercept-only model (mean clipped to ``[1/(2n), 1 - 1/(2n)]``)
        instead of raising ``DegenerateFitError``.

    Returns
    -------
    PredilectionModel
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError("X must be (n, p) and y must be (n,)")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite covariate value")
    if not np.all(np.isfinite(y)):
        raise ValidationError("non-finite outcome value")
    if ridge_penalty < 0:
        raise ValidationError("ridge_penalty must be nonnegative")
    n, p = X.shape
    if n == 0:
        raise DegenerateFitError("no records to fit")
    lam = float(ridge_penalty)
    design = np.hstack([np.ones((n, 1)), X])
    penalty = np.full(p + 1, lam)
    penalty[0] = 0.0

    if link == LINEAR:
        A = design.T @ design + np.diag(penalty)
        b = np.linalg.lstsq(A, design.T @ y, rcond=None)[0]
        return PredilectionModel(LINEAR, float(b[0]), b[1:], lam, True, 1, tuple(covariate_names))
    if link != LOGISTIC:
        raise ValidationError(f"unknown link {link!r}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic link requires 0/1 outcomes")

    ybar = y.mean()
    if ybar in (0.0, 1.0):
        if not intercept_only_fallback:
            raise DegenerateFitError(
                f"all {n} outcomes equal {int(ybar)}; the intercept has no finite maximum"
            )
        clipped = min(max(ybar, 0.5 / n), 1 - 0.5 / n)
        return PredilectionModel(LOGISTIC, float(logit(clipped)), np.zeros(p), lam, True, 0,
                                 tuple(covariate_names))

    b = np.zeros(p + 1)
    b[0] = logit(ybar)
    eta = design @ b
    obj = _penalized_loglik(eta, y, b[1:], lam)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = design.T @ (y - mu) - penalty * b
        H = (design.T * w) @ design + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = b + t * step
            eta_c = design @ cand
            obj_c = _penalized_loglik(eta_c, y, cand[1:], lam)
            if obj_c >= obj or t < 1e-10:
                break
            t *= 0.5
        if obj_c < obj:
            # no ascent direction found at machine precision
            converged = np.max(np.abs(grad)) < 1e-6
            break
        delta = np.max(np.abs(cand - b))
        b, eta, obj = cand, eta_c, obj_c
        trace.append(obj)
        if delta < tol:
            converged = True
            break
    if not np.all(np.isfinite(b)):
        raise DegenerateFitError("IRLS diverged to non-finite coefficients")
    return PredilectionModel(LOGISTIC, float(b[0]), b[1:], lam, bool(converged), it,
                             tuple(covariate_names), tuple(trace))


# --------------------------------------------------------------------------
# Folds and scoring


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n_folds: int
    assignment: np.ndarray
    seed: Optional[int]

    def members(self, fold):
        return np.flatnonzero(self.assignment == fold)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_folds)


def make_fold_plan(n_controls, n_folds=10, seed=0, strata=None, shuffle=True):
    """Balanced partition of ``n_controls`` items into ``n_folds`` folds.

    Items are visited in a seeded random order (grouped by stratum when
    ``strata`` is given) and dealt round-robin, so fold sizes differ by at
    most one. ``shuffle=False`` gives contiguous blocks in input order.
    """
    if n_folds < 2:
        raise ValidationError("n_folds must be at least 2")
    if n_controls < n_folds:
        raise ValidationError(f"cannot split {n_controls} controls into {n_folds} folds")
    if not shuffle:
        assignment = np.arange(n_controls) * n_folds // n_controls
        return FoldPlan(n_folds, assignment, None)
    rng = substream(seed, "folds")
    order = rng.permutation(n_controls)
    if strata is not None:
        strata = np.asarray(strata)
        order = order[np.argsort(strata[order], kind="stable")]
    assignment = np.empty(n_controls, dtype=np.int64)
    assignment[order] = np.arange(n_controls) % n_folds
    return FoldPlan(n_folds, assignment, seed)


@dataclass(frozen=True, slots=True)
class ScoredPatient:
    patient_id: object
    score: float
    provenance: str
    fold: Optional[int] = None
    training_ids: frozenset = frozenset()


def prevalidated_control_scores(ids, X, y, fold_plan, link=LOGISTIC, ridge_penalty=DEFAULT_RIDGE):
    """Out-of-fold linear-predictor scores for every control.

    Returns the scored controls (input order) and the per-fold models.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ids = list(ids)
    if len(fold_plan.assignment) != len(ids):
        raise ValidationError("fold plan does not cover exactly these controls")
    scores = [None] * len(ids)
    models = []
    for f in range(fold_plan.n_folds):
        held = fold_plan.assignment == f
        try:
            model = fit_glm(X[~held], y[~held], link, ridge_penalty)
        except DegenerateFitError as exc:
            raise DegenerateFitError(f"fold {f}: {exc}") from exc
        models.append(model)
        train = frozenset(ids[r] for r in np.flatnonzero(~held))
        eta = model.linear_predictor(X[held]) if held.any() else []
        for r, s in zip(np.flatnonzero(held), eta):
            scores[r] = ScoredPatient(ids[r], float(s), PREVALIDATED, f, train)
    return scores, models


def score_with_model(model, ids, X, provenance=EXTERNAL, training_ids=frozenset()):
    eta = model.linear_predictor(X)
    return [ScoredPatient(pid, float(s), provenance, None, training_ids) for pid, s in zip(ids, eta)]


def score_treated(control_X, control_y, treated_ids, treated_X, link=LOGISTIC,
                  ridge_penalty=DEFAULT_RIDGE, model=None, covariate_names=(), control_ids=()):
    """Fit one model on all controls (unless ``model`` is supplied) and score the treated."""
    if model is None:
        model = fit_glm(control_X, control_y, link, ridge_penalty, covariate_names=covariate_names)
        return model, score_with_model(model, treated_ids, treated_X, FULL, frozenset(control_ids))
    return model, score_with_model(model, treated_ids, treated_X, EXTERNAL)
