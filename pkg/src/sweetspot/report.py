"""Report document, its JSON schema, and plot-data / intermediate exports."""

import csv
import json
import platform
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .inference import write_bootstrap_csv, write_null_csv
from .matching import write_matched_sets_csv
from .predilection import LOGISTIC, save_model
from .trial_data import BINARY

SCHEMA_VERSION = "1.0"

_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_quant = {
    "type": "object",
    "properties": {"q025": _num, "q500": _num, "q975": _num},
    "required": ["q025", "q500", "q975"],
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "sweetspot analysis report",
    "type": "object",
    "required": ["schema_version", "data", "predilection", "matching", "sweet_spot", "permutation",
                 "debias", "significant", "provenance"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "data": {
            "type": "object",
            "required": ["n_patients", "n_treated", "n_controls", "n_covariates", "outcome_kind",
                         "outcome_direction"],
        },
        "predilection": {
            "type": "object",
            "required": ["link", "source", "intercept", "coefficients", "ridge_penalty", "converged",
                         "n_iterations", "prevalidated"],
            "properties": {
                "coefficients": {"type": "object", "additionalProperties": _num},
                "odds_ratios": {"type": ["object", "null"], "additionalProperties": _num},
                "control_auroc": _num_or_null,
                "control_auprc": _num_or_null,
            },
        },
        "matching": {
            "type": "object",
            "required": ["ratio", "n_sets", "total_cost", "n_unmatched_controls", "n_unmatched_treated"],
        },
        "sweet_spot": {
            "type": "object",
            "required": ["i_hat", "j_hat", "z_hat", "score_lo", "score_hi", "n_sets_inside",
                         "tau_hat", "tau_outside"],
            "properties": {
                "i_hat": {"type": "integer", "minimum": 1},
                "j_hat": {"type": "integer", "minimum": 2},
                "z_hat": _num,
                "tau_hat": _num,
                "tau_outside": _num_or_null,
            },
        },
        "permutation": {
            "type": "object",
            "required": ["p_value", "estimator", "n_permutations", "n_exceed", "z_hat", "null_quantiles"],
            "properties": {
                "p_value": {"type": "number", "minimum": 0, "maximum": 1},
                "estimator": {"enum": ["plugin", "add_one"]},
                "null_quantiles": _quant,
            },
        },
        "debias": {
            "type": "object",
            "required": ["tau_hat", "tau_boot_mean", "bias_hat", "tau_corrected", "tau_outside",
                         "n_bootstraps", "location_quantiles"],
            "properties": {
                "location_quantiles": {
                    "type": "object",
                    "properties": {"i": _quant, "j": _quant},
                    "required": ["i", "j"],
                },
            },
        },
        "significant": {"type": "boolean"},
        "provenance": {
            "type": "object",
            "required": ["config", "seed", "versions", "input_digest"],
            "properties": {"input_digest": {"type": "string", "pattern": "^sha256:[0-9a-f]{64}$"}},
        },
    },
}


def validate_report(doc):
    jsonschema.validate(doc, REPORT_SCHEMA)


def report_json(doc):
    """Canonical serialization: validated, sorted keys, two-space indent, trailing newline."""
    validate_report(doc)
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _control_discrimination(dataset, control_scores):
    if dataset.outcome_kind != BINARY:
        return None, None
    row = dataset.index_of()
    y = np.array([dataset.outcomes[row[s.patient_id]] for s in control_scores])
    if y.min() == y.max():
        return None, None
    from sklearn.metrics import average_precision_score, roc_auc_score

    s = np.array([c.score for c in control_scores])
    return float(roc_auc_score(y, s)), float(average_precision_score(y, s))


def build_report(*, dataset, cfg, model, model_source, control_scores, sets, seq, loc, perm, deb,
                 matching_cost, input_digest):
    auroc, auprc = _control_discrimination(dataset, control_scores)
    matched_controls = sum(len(s.control_ids) for s in sets)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "data": {
            "n_patients": dataset.n_patients,
            "n_treated": dataset.n_treated,
            "n_controls": dataset.n_controls,
            "n_covariates": dataset.n_covariates,
            "outcome_kind": dataset.outcome_kind,
            "outcome_direction": dataset.outcome_direction,
        },
        "predilection": {
            **model.to_json(),
            "source": model_source,
            "odds_ratios": model.odds_ratios() if model.link == LOGISTIC else None,
            "converged": model.converged,
            "n_iterations": model.n_iterations,
            "prevalidated": model_source == "fitted" and cfg.prevalidate,
            "n_folds": cfg.n_folds if model_source == "fitted" and cfg.prevalidate else None,
            "control_auroc": auroc,
            "control_auprc": auprc,
        },
        "matching": {
            "ratio": cfg.ratio,
            "n_sets": len(seq),
            "total_cost": float(matching_cost),
            "n_unmatched_controls": dataset.n_controls - matched_controls,
            "n_unmatched_treated": dataset.n_treated - len(sets),
        },
        "sweet_spot": {
            "i_hat": loc.i_hat,
            "j_hat": loc.j_hat,
            "z_hat": loc.z_hat,
            "score_lo": loc.score_lo,
            "score_hi": loc.score_hi,
            "n_sets_inside": loc.length,
            "tau_hat": deb.tau_hat,
            "tau_outside": deb.tau_outside,
        },
        "permutation": perm.summary(),
        "debias": {
            "tau_hat": deb.tau_hat,
            "tau_boot_mean": deb.tau_boot_mean,
            "bias_hat": deb.bias_hat,
            "tau_corrected": deb.tau_corrected,
            "tau_outside": deb.tau_outside,
            "tau_outside_boot_mean": deb.tau_outside_boot_mean,
            "tau_outside_corrected": deb.tau_outside_corrected,
            "n_bootstraps": deb.n_bootstraps,
            "location_quantiles": deb.location_quantiles(),
        },
        "significant": bool(perm.p_value < cfg.alpha),
        "provenance": {
            "config": cfg.to_json(),
            "seed": cfg.seed,
            "versions": {
                "sweetspot": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "input_digest": input_digest,
        },
    }
    validate_report(doc)
    return doc


# --------------------------------------------------------------------------
# Plot data


def moving_average(x, window):
    """Centered moving average; near the ends the window shrinks to the available points."""
    x = np.asarray(x, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd count")
    if x.size == 0:
        return x.copy()
    # a window wider than the series averages everything reachable; shrink it to keep the output length
    kernel = np.ones(min(window, x.size - 1 + x.size % 2))
    sums = np.convolve(x, kernel, mode="same")
    counts = np.convolve(np.ones_like(x), kernel, mode="same")
    return sums / counts


def _writer(path):
    fh = Path(path).open("w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _f(v):
    return "" if v is None or (isinstance(v, float) and not np.isfinite(v)) else repr(float(v))


def emit_plot_data(result, out_dir, window=None):
    """Write the CSV tables needed to redraw the analysis figures.

    Returns a dict mapping table name to path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq, loc, perm, deb = result.sequence, result.location, result.permutation, result.debias
    n = len(seq)
    window = result.config.smoothing_window if window is None else window
    if window > n:
        clipped = n if n % 2 else n - 1
        warnings.warn(f"smoothing window {window} exceeds {n} sets; using {clipped}", stacklevel=2)
        window = clipped
    paths = {}

    smooth = moving_average(seq.effects, window)
    paths["effects"] = out / "effects_by_score.csv"
    fh, w = _writer(paths["effects"])
    with fh:
        w.writerow(["index", "score", "effect", "smoothed", "in_spot"])
        for k in range(n):
            w.writerow([k + 1, _f(seq.scores[k]), _f(seq.effects[k]), _f(smooth[k]),
                        int(loc.i_hat <= k + 1 <= loc.j_hat)])

    edges = np.histogram_bin_edges(np.r_[perm.null_max_z, perm.z_hat], bins="auto")
    counts, _ = np.histogram(perm.null_max_z, bins=edges)
    paths["null"] = out / "null_max_z_hist.csv"
    fh, w = _writer(paths["null"])
    with fh:
        w.writerow(["bin_lo", "bin_hi", "count", "contains_z_hat"])
        for k, c in enumerate(counts):
            last = k == len(counts) - 1
            has = edges[k] <= perm.z_hat < edges[k + 1] or (last and perm.z_hat == edges[-1])
            w.writerow([_f(edges[k]), _f(edges[k + 1]), int(c), int(has)])

    paths["bootstrap"] = out / "bootstrap_location_hist.csv"
    fh, w = _writer(paths["bootstrap"])
    with fh:
        w.writerow(["endpoint", "index", "count", "observed"])
        for name, vals, obs in (("i", deb.boot_i, loc.i_hat), ("j", deb.boot_j, loc.j_hat)):
            uniq, cnt = np.unique(vals, return_counts=True)
            for u, c in zip(uniq, cnt):
                w.writerow([name, int(u), int(c), int(u == obs)])

    paths["segments"] = out / "cate_segments.csv"
    fh, w = _writer(paths["segments"])
    with fh:
        w.writerow(["segment", "score_lo", "score_hi", "tau_naive", "tau_corrected"])
        if loc.i_hat > 1:
            w.writerow(["below", _f(seq.scores[0]), _f(seq.scores[loc.i_hat - 2]), _f(deb.tau_outside),
                        _f(deb.tau_outside_corrected)])
        w.writerow(["inside", _f(loc.score_lo), _f(loc.score_hi), _f(deb.tau_hat), _f(deb.tau_corrected)])
        if loc.j_hat < n:
            w.writerow(["above", _f(seq.scores[loc.j_hat]), _f(seq.scores[-1]), _f(deb.tau_outside),
                        _f(deb.tau_outside_corrected)])
    return paths


def write_intermediate(result, out_dir):
    """Scores, matched sets, model, null distribution and bootstrap replicates."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"scores": out / "scores.csv"}
    fh, w = _writer(paths["scores"])
    with fh:
        w.writerow(["patient_id", "arm", "score", "provenance", "fold"])
        for arm, scored in (("control", result.control_scores), ("treated", result.treated_scores)):
            for s in scored:
                w.writerow([s.patient_id, arm, _f(s.score), s.provenance, "" if s.fold is None else s.fold])
    paths["matched_sets"] = write_matched_sets_csv(result.sequence.sets, out / "matched_sets.csv")
    paths["null"] = write_null_csv(result.permutation, out / "null_distribution.csv")
    paths["bootstrap"] = write_bootstrap_csv(result.debias, out / "bootstrap_replicates.csv")
    paths["model"] = out / "model.json"
    save_model(result.model, paths["model"])
    return paths
