"""End-to-end analysis: score, match, scan, calibrate, debias."""

import hashlib
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import StageError, SweetSpotError, ValidationError
from .inference import ESTIMATORS, PLUGIN, bootstrap_debias, permutation_test
from .matching import compute_effects, optimal_match, total_cost
from .predilection import (
    DEFAULT_RIDGE,
    LINEAR,
    LOGISTIC,
    PredilectionModel,
    make_fold_plan,
    prevalidated_control_scores,
    score_treated,
    score_with_model,
)
from .report import build_report
from .scan import ScanConstraints, find_sweet_spot
from .trial_data import BINARY, trial_csv_text

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisConfig:
    link: Optional[str] = None
    n_folds: int = 10
    ridge_penalty: float = DEFAULT_RIDGE
    ratio: int = 1
    constraints: ScanConstraints = field(default_factory=ScanConstraints)
    n_permutations: int = 1000
    n_bootstraps: int = 1000
    estimator: str = PLUGIN
    seed: int = 0
    alpha: float = 0.05
    smoothing_window: int = 51
    prevalidate: bool = True
    stratify_folds: bool = False
    drop_surplus_treated: bool = True
    model: Optional[PredilectionModel] = None

    def __post_init__(self):
        if self.link not in (None, LOGISTIC, LINEAR):
            raise ValidationError(f"unknown link {self.link!r}")
        if self.ratio < 1:
            raise ValidationError("ratio must be at least 1")
        if self.n_permutations < 1 or self.n_bootstraps < 1:
            raise ValidationError("permutation and bootstrap counts must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {self.estimator!r}")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValidationError("smoothing_window must be a positive odd count")

    def to_json(self):
        doc = asdict(replace(self, model=None))
        doc["model"] = None if self.model is None else self.model.to_json()
        return doc


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    """Every intermediate artifact of one analysis plus the report document."""

    dataset: object
    config: AnalysisConfig
    model: PredilectionModel
    control_scores: list
    treated_scores: list
    sets: list
    sequence: object
    location: object
    permutation: object
    debias: object
    report: dict

    def in_spot_patient_ids(self):
        ids = set()
        for s in self.sequence.sets[self.location.i_hat - 1 : self.location.j_hat]:
            ids.add(s.treated_id)
            ids.update(s.control_ids)
        return ids

    def matched_patient_ids(self):
        ids = set()
        for s in self.sequence.sets:
            ids.add(s.treated_id)
            ids.update(s.control_ids)
        return ids


def dataset_digest(dataset):
    """SHA-256 of the dataset's canonical CSV serialization."""
    return "sha256:" + hashlib.sha256(trial_csv_text(dataset).encode("utf-8")).hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, SweetSpotError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _score(dataset, cfg):
    link = cfg.link or (LOGISTIC if dataset.outcome_kind == BINARY else LINEAR)
    ids = np.array(dataset.ids, dtype=object)
    ctrl = ~dataset.treated
    cX, cy, cids = dataset.covariates[ctrl], dataset.outcomes[ctrl], ids[ctrl]
    tX, tids = dataset.covariates[~ctrl], ids[~ctrl]
    if cfg.model is not None:
        model = cfg.model
        return model, score_with_model(model, cids, cX), score_with_model(model, tids, tX)
    model, treated_scores = score_treated(cX, cy, tids, tX, link, cfg.ridge_penalty,
                                          covariate_names=dataset.covariate_names, control_ids=cids)
    if cfg.prevalidate:
        plan = make_fold_plan(len(cids), cfg.n_folds, cfg.seed,
                              strata=cy if cfg.stratify_folds else None)
        control_scores, _ = prevalidated_control_scores(cids, cX, cy, plan, link, cfg.ridge_penalty)
    else:
        control_scores = score_with_model(model, cids, cX, "full", frozenset(cids))
    return model, control_scores, treated_scores


def analyze(dataset, cfg=AnalysisConfig(), input_digest=None):
    """Run the five-step sweet spot analysis on ``dataset``.

    1. predilection scores (out-of-fold for controls, full-control model for
       treated, or an external model for both);
    2. optimal k:1 matching and per-set benefit-positive effects;
    3. exhaustive interval scan;
    4. permutation p-value;
    5. bootstrap debiasing and location uncertainty.

    Errors raised by a stage are re-raised as ``StageError`` naming it. A
    non-significant spot is a normal result.
    """
    with _Stage("predilection"):
        model, control_scores, treated_scores = _score(dataset, cfg)
    with _Stage("matching"):
        n_t, n_c = len(treated_scores), len(control_scores)
        if n_c < cfg.ratio * n_t:
            if cfg.ratio == 1 and cfg.drop_surplus_treated:
                warnings.warn(f"{n_t - n_c} surplus treated patient(s) left unmatched", stacklevel=2)
            else:
                log.warning("fewer than %d controls per treated patient", cfg.ratio)
        sets = optimal_match(control_scores, treated_scores, cfg.ratio,
                             drop_surplus_treated=cfg.drop_surplus_treated)
        seq = compute_effects(sets, dataset)
    with _Stage("scan"):
        loc = find_sweet_spot(seq, cfg.constraints)
    with _Stage("permutation"):
        perm = permutation_test(seq, loc.z_hat, cfg.constraints, cfg.n_permutations, cfg.seed, cfg.estimator)
    with _Stage("debias"):
        deb = bootstrap_debias(seq, loc, cfg.constraints, cfg.n_bootstraps, cfg.seed)

    if input_digest is None:
        input_digest = dataset_digest(dataset)
    report = build_report(
        dataset=dataset,
        cfg=cfg,
        model=model,
        model_source="external" if cfg.model is not None else "fitted",
        control_scores=control_scores,
        sets=sets,
        seq=seq,
        loc=loc,
        perm=perm,
        deb=deb,
        matching_cost=total_cost(sets),
        input_digest=input_digest,
    )
    return AnalysisResult(dataset, cfg, model, control_scores, treated_scores, sets, seq, loc, perm,
                          deb, report)
