"""Monte Carlo studies: type I error, power surfaces and the prevalidation ablation.

Each trial is a pure function of ``(master_seed, cell index, trial index)``;
trials run serially or in a process pool and are aggregated in a fixed order,
so outputs do not depend on the number of workers.
"""

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from ._rng import derive_seed
from .errors import EmptyExperimentError, SweetSpotError, ValidationError
from .pipeline import AnalysisConfig, analyze
from .scan import ScanConstraints
from .trial_data import (
    SEVERITY_BAND,
    NullSimConfig,
    SweetSpotSimConfig,
    simulate_null_trial,
    simulate_sweetspot_trial,
)

log = logging.getLogger(__name__)

TYPE1 = "type1"
POWER = "power"
ABLATION = "preval-ablation"
CLAMP_WARN_FRACTION = 0.05


@dataclass(frozen=True)
class ExperimentGrid:
    n_trials_per_cell: int = 200
    extra_effect_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    spot_fraction_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    alpha: float = 0.05
    base_cfg: NullSimConfig = field(default_factory=NullSimConfig)
    n_permutations: int = 500
    n_bootstraps: int = 200
    prevalidation: bool = True
    master_seed: int = 0
    n_folds: int = 10

    def __post_init__(self):
        if self.n_trials_per_cell < 0:
            raise ValidationError("n_trials_per_cell must be nonnegative")
        if not self.extra_effect_grid or not self.spot_fraction_grid:
            raise ValidationError("effect and fraction grids must be nonempty")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        object.__setattr__(self, "extra_effect_grid", tuple(float(v) for v in self.extra_effect_grid))
        object.__setattr__(self, "spot_fraction_grid", tuple(float(v) for v in self.spot_fraction_grid))

    @classmethod
    def full(cls, **overrides):
        """Full-size study: 1000 trials per cell, 1000 permutations and bootstraps."""
        return cls(**{"n_trials_per_cell": 1000, "n_permutations": 1000, "n_bootstraps": 1000, **overrides})


@dataclass(frozen=True)
class TrialTask:
    cell: int
    trial: int
    seed: int
    sim: object
    analysis: AnalysisConfig


def _jaccard(a, b):
    union = a | b
    return len(a & b) / len(union) if union else None


def run_trial(task):
    """Simulate one trial and analyze it; returns a flat record."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if isinstance(task.sim, SweetSpotSimConfig):
                ds, truth = simulate_sweetspot_trial(task.sim)
            else:
                ds, truth = simulate_null_trial(task.sim)
            res = analyze(ds, task.analysis, input_digest="sha256:" + "0" * 64)
    except SweetSpotError as exc:
        raise SweetSpotError(f"trial seed {task.seed} (cell {task.cell}, trial {task.trial}): {exc}") from exc
    members = {pid for pid, m in zip(ds.ids, truth.spot_member) if m}
    jac = None
    if members:
        jac = _jaccard(res.in_spot_patient_ids(), members & res.matched_patient_ids())
    deb, loc = res.debias, res.location
    return {
        "cell": task.cell,
        "trial": task.trial,
        "seed": task.seed,
        "p_value": res.permutation.p_value,
        "z_hat": loc.z_hat,
        "i_hat": loc.i_hat,
        "j_hat": loc.j_hat,
        "n_sets": len(res.sequence),
        "tau_hat": deb.tau_hat,
        "tau_corrected": deb.tau_corrected,
        "jaccard": jac,
        "clamp_count": truth.clamp_count,
        "n_patients": ds.n_patients,
    }


def _execute(tasks, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(run_trial, tasks, chunksize=max(1, len(tasks) // (8 * workers)))
    else:
        yield from map(run_trial, tasks)


def binomial_se(rate, m):
    return math.sqrt(rate * (1 - rate) / m) if m else math.nan


def _cell_summary(coords, records, alpha):
    m = len(records)
    p = np.array([r["p_value"] for r in records])
    rate = float(np.mean(p < alpha))
    jac = [r["jaccard"] for r in records if r["jaccard"] is not None]
    ks = stats.kstest(p, "uniform")
    return {
        **coords,
        "n_trials": m,
        "rejection_rate": rate,
        "se": binomial_se(rate, m),
        "mean_tau_hat": float(np.mean([r["tau_hat"] for r in records])),
        "mean_tau_corrected": float(np.mean([r["tau_corrected"] for r in records])),
        "mean_jaccard": float(np.mean(jac)) if jac else None,
        "ks_distance": float(ks.statistic),
        "ks_critical_1pct": float(stats.kstwo.ppf(0.99, m)),
        "clamp_fraction": float(sum(r["clamp_count"] for r in records) / sum(r["n_patients"] for r in records)),
    }


@dataclass(frozen=True, eq=False)
class ExperimentSummary:
    kind: str
    config: dict
    cells: list
    trials: list
    runtime_seconds: float = 0.0

    def cell(self, **coords):
        for c in self.cells:
            if all(c.get(k) == v for k, v in coords.items()):
                return c
        raise KeyError(coords)

    def p_values(self, cell_index):
        return np.array([t["p_value"] for t in self.trials if t["cell"] == cell_index])

    def ecdf(self, cell_index):
        p = np.sort(self.p_values(cell_index))
        return p, np.arange(1, p.size + 1) / p.size

    @property
    def clamp_fraction(self):
        n = sum(t["n_patients"] for t in self.trials)
        return sum(t["clamp_count"] for t in self.trials) / n if n else 0.0

    def to_json(self):
        return {"kind": self.kind, "config": self.config, "cells": self.cells,
                "clamp_fraction": self.clamp_fraction}

    def write(self, out_dir):
        """summary.json, trials.csv (per-trial p-values), tidy.csv (long format), timing.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
        cols = ["cell", "trial", "seed", "p_value", "z_hat", "i_hat", "j_hat", "n_sets", "tau_hat",
                "tau_corrected", "jaccard", "clamp_count"]
        with (out / "trials.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for t in self.trials:
                w.writerow(["" if t[c] is None else (repr(t[c]) if isinstance(t[c], float) else t[c])
                            for c in cols])
        coord_keys = [k for k in ("p", "prevalidation", "spot_definition", "extra_effect", "spot_fraction")
                      if any(k in c for c in self.cells)]
        metrics = ["rejection_rate", "se", "mean_tau_corrected", "mean_jaccard", "ks_distance", "clamp_fraction"]
        with (out / "tidy.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["experiment", "cell", *coord_keys, "metric", "value"])
            for k, c in enumerate(self.cells):
                for m in metrics:
                    v = c.get(m)
                    w.writerow([self.kind, k, *(c.get(ck, "") for ck in coord_keys), m,
                                "" if v is None else repr(v)])
        (out / "timing.json").write_text(json.dumps({"runtime_seconds": self.runtime_seconds}) + "\n",
                                         encoding="utf-8")
        return out


def _analysis_cfg(grid, seed, prevalidate):
    return AnalysisConfig(
        n_folds=grid.n_folds,
        n_permutations=grid.n_permutations,
        n_bootstraps=grid.n_bootstraps,
        seed=seed,
        alpha=grid.alpha,
        prevalidate=prevalidate,
        constraints=ScanConstraints(),
    )


def _run(kind, grid, cells, workers, extra_config=None):
    """``cells`` is a list of (coords, seed_cell_index, make_sim(seed), prevalidate)."""
    if grid.n_trials_per_cell < 1:
        raise EmptyExperimentError("experiment needs at least one trial per cell")
    start = time.perf_counter()
    tasks = []
    for c, (_, seed_cell, make_sim, preval) in enumerate(cells):
        for t in range(grid.n_trials_per_cell):
            seed = derive_seed(grid.master_seed, seed_cell, t)
            tasks.append(TrialTask(c, t, seed, make_sim(seed), _analysis_cfg(grid, seed, preval)))
    records = []
    for k, rec in enumerate(_execute(tasks, workers), start=1):
        records.append(rec)
        if k % max(1, len(tasks) // 20) == 0 or k == len(tasks):
            log.info("%s: %d/%d trials", kind, k, len(tasks))
    summaries = []
    for c, (coords, *_rest) in enumerate(cells):
        cell_records = [r for r in records if r["cell"] == c]
        summaries.append(_cell_summary(coords, cell_records, grid.alpha))
    summary = ExperimentSummary(kind, {**_grid_json(grid), **(extra_config or {})}, summaries, records,
                                time.perf_counter() - start)
    if summary.clamp_fraction > CLAMP_WARN_FRACTION:
        log.warning("%.1f%% of simulated patients needed probability clamping", 100 * summary.clamp_fraction)
    return summary


def _grid_json(grid):
    return asdict(grid)


def run_type1(grid, workers=1):
    """Null-trial rejection rate and p-value calibration."""
    base = grid.base_cfg
    cells = [({"extra_effect": 0.0}, 0, lambda s: replace(base, seed=s), grid.prevalidation)]
    return _run(TYPE1, grid, cells, workers)


def run_power(grid, spot_definition=SEVERITY_BAND, workers=1, region_covariates=(0, 1, 2)):
    """Rejection rate over the extra-effect x spot-fraction grid."""
    if any(e <= 0 for e in grid.extra_effect_grid):
        raise ValidationError("power grid effects must be positive")
    base = grid.base_cfg
    cells = []
    for a, frac in enumerate(grid.spot_fraction_grid):
        for b, eff in enumerate(grid.extra_effect_grid):
            def make(s, eff=eff, frac=frac):
                return SweetSpotSimConfig(replace(base, seed=s), eff, frac, spot_definition, region_covariates)
            idx = a * len(grid.extra_effect_grid) + b
            coords = {"spot_definition": spot_definition, "extra_effect": eff, "spot_fraction": frac}
            cells.append((coords, idx, make, grid.prevalidation))
    return _run(POWER if spot_definition == SEVERITY_BAND else "power-covariate", grid, cells, workers)


def run_prevalidation_ablation(grid, p_list=(10, 100), n_patients=800, workers=1):
    """Null trials scored with and without out-of-fold control scores.

    Both arms of a given ``p`` analyze the same simulated trials.
    """
    cells = []
    for a, p in enumerate(p_list):
        base = replace(grid.base_cfg, n_patients=n_patients, n_covariates=int(p))
        for preval in (True, False):
            cells.append(({"p": int(p), "prevalidation": preval}, a,
                          lambda s, base=base: replace(base, seed=s), preval))
    return _run(ABLATION, grid, cells, workers, {"p_list": list(p_list), "n_patients": n_patients})
