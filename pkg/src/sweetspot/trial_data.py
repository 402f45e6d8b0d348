"""Trial data model, CSV round-tripping and synthetic trial generators."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from ._rng import substream
from .errors import ParseError, SchemaError, ValidationError

BINARY = "binary"
CONTINUOUS = "continuous"
HIGHER_IS_WORSE = "higher_is_worse"
HIGHER_IS_BETTER = "higher_is_better"
OUTCOME_KINDS = (BINARY, CONTINUOUS)
OUTCOME_DIRECTIONS = (HIGHER_IS_WORSE, HIGHER_IS_BETTER)

SEVERITY_BAND = "severity_quantile_band"
COVARIATE_REGION = "covariate_region"


def _readonly(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PatientRecord:
    id: object
    covariates: np.ndarray
    treated: bool
    outcome: float


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Per-patient covariates, arm assignment and outcome.

    Stored column-wise; ``patients`` gives the row view. Arrays are made
    read-only on construction.
    """

    ids: tuple
    covariates: np.ndarray
    treated: np.ndarray
    outcomes: np.ndarray
    outcome_kind: str = BINARY
    outcome_direction: str = HIGHER_IS_WORSE
    covariate_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValidationError("covariates must be a 2-D array with at least one column")
        n, p = X.shape
        treated = np.asarray(self.treated)
        if treated.dtype != bool:
            if not np.all(np.isin(treated, (0, 1))):
                raise ValidationError("treatment indicator must be 0/1")
            treated = treated.astype(bool)
        y = np.asarray(self.outcomes, dtype=float)
        if treated.shape != (n,) or y.shape != (n,) or len(self.ids) != n:
            raise ValidationError("ids, covariates, treated and outcomes must have matching lengths")
        if not np.all(np.isfinite(X)):
            raise ValidationError("all covariate values must be finite")
        if not np.all(np.isfinite(y)):
            raise ValidationError("all outcomes must be finite")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValidationError(f"unknown outcome_kind {self.outcome_kind!r}")
        if self.outcome_direction not in OUTCOME_DIRECTIONS:
            raise ValidationError(f"unknown outcome_direction {self.outcome_direction!r}")
        if self.outcome_kind == BINARY and not np.all((y == 0) | (y == 1)):
            raise ValidationError("binary outcomes must be exactly 0 or 1")
        if not treated.any() or treated.all():
            raise ValidationError("need at least one treated and one control patient")
        if len(set(self.ids)) != n:
            raise ValidationError("patient ids must be unique")
        names = tuple(self.covariate_names) or tuple(f"x{k + 1}" for k in range(p))
        if len(names) != p:
            raise ValidationError("covariate_names length does not match covariate dimension")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "covariates", _readonly(X))
        object.__setattr__(self, "treated", _readonly(treated))
        object.__setattr__(self, "outcomes", _readonly(y))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_patients(self):
        return len(self.ids)

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    @property
    def n_treated(self):
        return int(self.treated.sum())

    @property
    def n_controls(self):
        return self.n_patients - self.n_treated

    @property
    def patients(self):
        return [
            PatientRecord(pid, self.covariates[r], bool(self.treated[r]), float(self.outcomes[r]))
            for r, pid in enumerate(self.ids)
        ]

    def index_of(self):
        """Map patient id -> row position."""
        return {pid: r for r, pid in enumerate(self.ids)}

    def equals(self, other):
        return (
            self.ids == other.ids
            and self.outcome_kind == other.outcome_kind
            and self.outcome_direction == other.outcome_direction
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.treated, other.treated)
            and np.array_equal(self.outcomes, other.outcomes)
        )


# --------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    treat_col: str
    outcome_col: str
    covariate_cols: Union[Sequence[str], str] = "rest"
    id_col: Optional[str] = None


def _parse_float(text, row, col):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r} at row {row}, column {col!r}", row, col) from None
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {text!r} at row {row}, column {col!r}")
    return value


def load_trial_csv(path, schema, outcome_kind="auto", outcome_direction=HIGHER_IS_WORSE):
    """Read a header-first, comma-separated UTF-8 file into a TrialDataset.

    Rows are numbered from 1 (the first data row) in error messages. When
    ``schema.id_col`` is None the row number is used as the patient id.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = list(reader)

    col_of = {name: k for k, name in enumerate(header)}
    required = [schema.treat_col, schema.outcome_col] + ([schema.id_col] if schema.id_col else [])
    for name in required:
        if name not in col_of:
            raise SchemaError(f"{path}: missing column {name!r}")
    if isinstance(schema.covariate_cols, str):
        if schema.covariate_cols != "rest":
            raise SchemaError("covariate_cols must be a list of names or 'rest'")
        cov_names = [h for h in header if h not in required]
    else:
        cov_names = list(schema.covariate_cols)
        for name in cov_names:
            if name not in col_of:
                raise SchemaError(f"{path}: missing column {name!r}")
    if not cov_names:
        raise SchemaError(f"{path}: at least one covariate column is required")

    n = len(rows)
    X = np.empty((n, len(cov_names)))
    treated = np.empty(n, dtype=bool)
    y = np.empty(n)
    ids = []
    for r, raw in enumerate(rows, start=1):
        if len(raw) != len(header):
            raise ParseError(f"row {r} has {len(raw)} fields, expected {len(header)}", r, None)
        t = raw[col_of[schema.treat_col]].strip()
        if t in ("0", "1"):
            treated[r - 1] = t == "1"
        else:
            tv = _parse_float(t, r, schema.treat_col)
            if tv not in (0.0, 1.0):
                raise ValidationError(f"treatment value {t!r} at row {r}, column {schema.treat_col!r} is not 0 or 1")
            treated[r - 1] = tv == 1.0
        y[r - 1] = _parse_float(raw[col_of[schema.outcome_col]], r, schema.outcome_col)
        for k, name in enumerate(cov_names):
            X[r - 1, k] = _parse_float(raw[col_of[name]], r, name)
        ids.append(raw[col_of[schema.id_col]].strip() if schema.id_col else r)

    if schema.id_col and all(isinstance(i, str) and i.lstrip("-").isdigit() for i in ids):
        ids = [int(i) for i in ids]
    if outcome_kind == "auto":
        outcome_kind = BINARY if np.all((y == 0) | (y == 1)) else CONTINUOUS
    return TrialDataset(
        ids=tuple(ids),
        covariates=X,
        treated=treated,
        outcomes=y,
        outcome_kind=outcome_kind,
        outcome_direction=outcome_direction,
        covariate_names=tuple(cov_names),
    )


def _fmt(value):
    return repr(float(value))


def trial_csv_text(dataset, treat_col="treat", outcome_col="outcome", id_col="id"):
    """Serialize ``dataset`` in the loader's dialect; floats use shortest round-trip repr."""
    buf = io.StringIO()
    binary = dataset.outcome_kind == BINARY
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([id_col, treat_col, outcome_col, *dataset.covariate_names])
    for r, pid in enumerate(dataset.ids):
        y = dataset.outcomes[r]
        w.writerow(
            [
                pid,
                int(dataset.treated[r]),
                int(y) if binary else _fmt(y),
                *(_fmt(v) for v in dataset.covariates[r]),
            ]
        )
    return buf.getvalue()


def write_trial_csv(dataset, path, **columns):
    path = Path(path)
    path.write_text(trial_csv_text(dataset, **columns), encoding="utf-8", newline="")
    return path


# --------------------------------------------------------------------------
# Simulation


@dataclass(frozen=True)
class NullSimConfig:
    n_patients: int = 400
    n_covariates: int = 10
    treat_prob: float = 0.5
    base_treatment_effect: float = 0.05
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 2 or self.n_covariates < 1:
            raise ValidationError("need n_patients >= 2 and n_covariates >= 1")
        if not 0 < self.treat_prob < 1:
            raise ValidationError("treat_prob must lie in (0, 1)")
        if not 0 <= self.base_treatment_effect < 1:
            raise ValidationError("base_treatment_effect must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be nonnegative")


@dataclass(frozen=True)
class SweetSpotSimConfig:
    base: NullSimConfig = field(default_factory=NullSimConfig)
    extra_effect: float = 0.3
    spot_fraction: float = 0.3
    spot_definition: str = SEVERITY_BAND
    region_covariates: tuple = (0, 1, 2)

    def __post_init__(self):
        if not 0 <= self.extra_effect < 1:
            raise ValidationError("extra_effect must lie in [0, 1)")
        if not 0 < self.spot_fraction < 1:
            raise ValidationError("spot_fraction must lie in (0, 1)")
        if self.spot_definition not in (SEVERITY_BAND, COVARIATE_REGION):
            raise ValidationError(f"unknown spot_definition {self.spot_definition!r}")
        rc = tuple(int(k) for k in self.region_covariates)
        object.__setattr__(self, "region_covariates", rc)
        if self.spot_definition == COVARIATE_REGION:
            if not rc or len(set(rc)) != len(rc):
                raise ValidationError("region_covariates must be distinct and nonempty")
            if min(rc) < 0 or max(rc) >= self.base.n_covariates:
                raise ValidationError("region_covariates out of range")


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    """Ground truth behind a simulated trial."""

    beta: np.ndarray
    noise: np.ndarray
    control_prob: np.ndarray
    outcome_prob: np.ndarray
    spot_member: np.ndarray
    clamp_count: int
    config: dict
    region_bounds: Optional[list] = None

    @property
    def clamp_fraction(self):
        return self.clamp_count / len(self.control_prob)

    def to_json(self):
        return {
            "config": self.config,
            "beta": self.beta.tolist(),
            "noise": self.noise.tolist(),
            "control_prob": self.control_prob.tolist(),
            "outcome_prob": self.outcome_prob.tolist(),
            "spot_member": self.spot_member.astype(int).tolist(),
            "clamp_count": self.clamp_count,
            "clamp_fraction": self.clamp_fraction,
            "region_bounds": self.region_bounds,
        }


def write_truth_json(truth, path):
    path = Path(path)
    path.write_text(json.dumps(truth.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _draw_trial(cfg, beta=None):
    n, p, seed = cfg.n_patients, cfg.n_covariates, cfg.seed
    X = substream(seed, "sim.covariates").standard_normal((n, p))
    if beta is None:
        beta = substream(seed, "sim.beta").standard_normal(p)
    beta = np.asarray(beta, dtype=float)
    noise = cfg.noise_sd * substream(seed, "sim.noise").standard_normal(n)
    treated = substream(seed, "sim.assign").random(n) < cfg.treat_prob
    u = substream(seed, "sim.outcome").random(n)
    control_prob = expit(X @ beta + noise)
    return X, beta, noise, treated, u, control_prob


def _finish(cfg, X, beta, noise, treated, u, control_prob, reduction, member, config, region=None):
    raw = np.where(treated, control_prob - reduction, control_prob)
    clamp_count = int(np.count_nonzero((raw < 0) | (raw > 1)))
    prob = np.clip(raw, 0.0, 1.0)
    y = (u < prob).astype(float)
    ds = TrialDataset(
        ids=tuple(range(1, cfg.n_patients + 1)),
        covariates=X,
        treated=treated,
        outcomes=y,
        outcome_kind=BINARY,
        outcome_direction=HIGHER_IS_WORSE,
    )
    truth = SimulationTruth(
        beta=_readonly(beta),
        noise=_readonly(noise),
        control_prob=_readonly(control_prob),
        outcome_prob=_readonly(prob),
        spot_member=_readonly(member),
        clamp_count=clamp_count,
        config=config,
        region_bounds=region,
    )
    return ds, truth


def simulate_null_trial(cfg, beta=None):
    """Simulate a trial with a homogeneous treatment effect on the probability scale.

    ``beta`` overrides the drawn coefficient vector (a testing hook); all other
    draws are unchanged by it.
    """
    X, beta, noise, treated, u, cp = _draw_trial(cfg, beta)
    member = np.zeros(cfg.n_patients, dtype=bool)
    return _finish(cfg, X, beta, noise, treated, u, cp, cfg.base_treatment_effect, member,
                   {"kind": "null", **asdict(cfg)})


def severity_band(control_prob, fraction):
    """Patients whose control-arm risk lies in the central quantile band of width ``fraction``."""
    lo, hi = np.quantile(control_prob, [0.5 - fraction / 2, 0.5 + fraction / 2])
    return (control_prob >= lo) & (control_prob <= hi)


def covariate_region(X, covariates, fraction, rng):
    """Axis-aligned box on ``covariates`` holding about ``fraction`` of N(0, I) mass.

    Each axis gets an interval of standard-normal probability ``fraction ** (1/d)``
    placed at a random offset, so the expected in-box fraction is exactly
    ``fraction`` for independent standard-normal covariates.
    """
    d = len(covariates)
    q = fraction ** (1.0 / d)
    lows = rng.random(d) * (1.0 - q)
    bounds = [(float(norm.ppf(a)), float(norm.ppf(a + q))) for a in lows]
    inside = np.ones(X.shape[0], dtype=bool)
    for col, (a, b) in zip(covariates, bounds):
        inside &= (X[:, col] >= a) & (X[:, col] <= b)
    return inside, [{"covariate": int(c), "low": a, "high": b} for c, (a, b) in zip(covariates, bounds)]


def simulate_sweetspot_trial(cfg, beta=None):
    """Simulate a trial where spot members receive an extra risk reduction when treated."""
    base = cfg.base
    X, beta, noise, treated, u, cp = _draw_trial(base, beta)
    region = None
    if cfg.spot_definition == SEVERITY_BAND:
        member = severity_band(cp, cfg.spot_fraction)
    else:
        member, region = covariate_region(X, cfg.region_covariates, cfg.spot_fraction,
                                          substream(base.seed, "sim.region"))
    reduction = base.base_treatment_effect + cfg.extra_effect * member
    config = {"kind": "sweetspot", **asdict(cfg)}
    return _finish(base, X, beta, noise, treated, u, cp, reduction, member, config, region)
