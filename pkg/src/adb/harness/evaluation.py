"""Model selection baselines, statistics and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

from ..errors import DegenerateVarianceError, InputError, SelectionError
from ..grouping import GROUPS, HIGH, LOW, MEDIUM
from ..sequencing import Permutation
from .models import ModelSpec, TrainConfig, regression_metrics, train_with_schedule

METRICS = ("id_mae", "id_rmse", "ood_mae", "ood_rmse")
CV_GROUP = "CV"


@dataclass
class ModelRecord:
    """Metrics of one trained model; ``group`` is a deviation group or ``CV``."""

    model_id: int
    group: str
    id_mae: float
    id_rmse: float
    ood_mae: float
    ood_rmse: float
    init_seed: int = 0
    schedule: list = field(default_factory=list)

    def metrics(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def check_record(rec: ModelRecord):
    """MAE can never exceed RMSE on the same residuals."""
    tol = 1e-12
    if rec.id_mae > rec.id_rmse * (1 + tol) or rec.ood_mae > rec.ood_rmse * (1 + tol):
        raise InputError(f"model {rec.model_id}: MAE exceeds RMSE")


# ---------------------------------------------------------------- CV baseline

def kfold_indices(n: int, folds: int, seed=None) -> list:
    """Disjoint near-equal folds covering ``range(n)``.

    With a seed the rows are shuffled first; fold sizes differ by at most one.
    """
    if folds < 2:
        raise InputError(f"folds must be >= 2, got {folds}")
    if n < 2 * folds:
        raise InputError(f"{n} rows are too few for {folds} folds")
    rows = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(rows, folds)]


@dataclass
class CVResult:
    records: list
    fold_val_mae: list
    selected: int
    ood_abs_errors: np.ndarray = field(repr=False, default=None)

    @property
    def best(self) -> ModelRecord:
        return self.records[self.selected]

    def spread(self) -> dict:
        """Mean and population sd of each metric across folds."""
        out = {}
        for m in METRICS:
            v = np.array([getattr(r, m) for r in self.records])
            out[m] = {"mean": float(v.mean()), "sd": float(v.std())}
        return out


def kfold_cv_baseline(data, spec: ModelSpec, cfg: TrainConfig, folds: int = 10, seed: int = 0,
                      first_id: int = 0) -> CVResult:
    """Train one model per fold on its complement and keep the best held-out MAE.

    Each epoch uses a fresh uniform shuffle of the complement rows.
    Ties in held-out MAE go to the lower fold index.
    """
    n = len(data.train)
    fold_sets = kfold_indices(n, folds, seed=np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(4,)))
    records, val_mae, ood_err = [], [], []
    for k, held in enumerate(fold_sets):
        keep = np.setdiff1d(np.arange(n), held, assume_unique=True)
        sub = replace(data, train=data.train.take(keep))
        rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(5, k)))
        schedule = [Permutation(rng.permutation(len(keep)), e) for e in range(cfg.epochs)]
        init = int(rng.integers(2**31))
        res = train_with_schedule(spec, sub, replace(cfg, seed=init), schedule)
        held_m = regression_metrics(data.train.y[held], res.model.predict(data.train.X[held]))
        val_mae.append(held_m["mae"])
        ood_err.append(np.abs(res.model.predict(data.ood.X) - data.ood.y))
        records.append(ModelRecord(first_id + k, CV_GROUP, res.id_mae, res.id_rmse, res.ood_mae, res.ood_rmse, init, []))
    selected = int(np.argmin(val_mae))
    return CVResult(records, [float(v) for v in val_mae], selected, ood_err[selected])


# ------------------------------------------------------------- ADB selection

def proportional_allocation(sizes: dict, sample_size: int) -> dict:
    """Split ``sample_size`` over groups in proportion to ``sizes``.

    Largest-remainder rounding; equal remainders go to the larger group,
    then to Medium before High. If the groups hold no more than
    ``sample_size`` members, every member is taken.
    """
    total = sum(sizes.values())
    if total == 0:
        return {g: 0 for g in sizes}
    if total <= sample_size:
        return dict(sizes)
    quotas = {g: sample_size * s / total for g, s in sizes.items()}
    alloc = {g: int(math.floor(q)) for g, q in quotas.items()}
    left = sample_size - sum(alloc.values())
    order_pref = {MEDIUM: 0, HIGH: 1, LOW: 2}
    ranked = sorted(sizes, key=lambda g: (-(quotas[g] - alloc[g]), -sizes[g], order_pref.get(g, 3)))
    for g in ranked[:left]:
        alloc[g] += 1
    return alloc


@dataclass
class Selection:
    selected_id: int
    sampled_ids: list
    allocation: dict


def adb_select(records, sample_size: int = 10, seed: int = 0) -> Selection:
    """Sample Medium/High models proportionally and keep the largest ID error.

    Ties in ID MAE go to the lower model id.
    """
    if sample_size < 1:
        raise InputError("sample_size must be >= 1")
    pools = {g: sorted((r for r in records if r.group == g), key=lambda r: r.model_id) for g in (MEDIUM, HIGH)}
    sizes = {g: len(p) for g, p in pools.items()}
    if sum(sizes.values()) == 0:
        raise SelectionError("no Medium or High models to select from")
    alloc = proportional_allocation(sizes, sample_size)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(6,)))
    sampled = []
    for g in (MEDIUM, HIGH):
        if alloc[g]:
            pick = rng.choice(sizes[g], size=alloc[g], replace=False)
            sampled.extend(pools[g][i] for i in sorted(pick))
    best = min(sampled, key=lambda r: (-r.id_mae, r.model_id))
    return Selection(best.model_id, sorted(r.model_id for r in sampled), alloc)


def percentile_rank(selected_ood_error: float, pool_ood_errors) -> float:
    """Percentage of the pool with strictly larger OOD error."""
    pool = np.asarray(pool_ood_errors, dtype=np.float64)
    if pool.size == 0:
        raise InputError("empty pool")
    return 100.0 * float(np.sum(pool > selected_ood_error)) / pool.size


# ---------------------------------------------------------------- statistics

def paired_ttest(a, b):
    """Two-sided paired t-test on ``a - b`` with ``n - 1`` degrees of freedom.

    Identical samples give ``(0.0, 1.0)``. Differences that are constant but
    nonzero have no sampling variance and raise DegenerateVarianceError.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("paired samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise InputError(f"need at least 2 pairs, got {n}")
    d = a - b
    if np.all(d == 0):
        return 0.0, 1.0
    sd = d.std(ddof=1)
    if sd == 0:
        raise DegenerateVarianceError(f"all {n} paired differences equal {d[0]!r}")
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * stdtr(n - 1, -abs(t))
    return float(t), float(min(p, 1.0))


def _pearson(x, y):
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float(x @ x) * float(y @ y))
    return float(x @ y) / denom


def _corr_entry(recs):
    n = len(recs)
    if n < 3:
        return {"n": n, "pearson": None, "spearman": None, "flag": "fewer than 3 models"}
    x = np.array([r.id_mae for r in recs])
    y = np.array([r.ood_mae for r in recs])
    if x.std() == 0 or y.std() == 0:
        return {"n": n, "pearson": None, "spearman": None, "flag": "zero variance"}
    return {"n": n, "pearson": _pearson(x, y), "spearman": _pearson(rankdata(x), rankdata(y)), "flag": None}


def correlation_report(records) -> dict:
    """ID-vs-OOD MAE correlations per deviation group, over Medium+High and pooled."""
    recs = [r for r in records if r.group in GROUPS]
    out = {g: _corr_entry([r for r in recs if r.group == g]) for g in GROUPS}
    out["Medium+High"] = _corr_entry([r for r in recs if r.group in (MEDIUM, HIGH)])
    out["pooled"] = _corr_entry(recs)
    return out


def group_aggregates(records) -> dict:
    out = {}
    for g in GROUPS:
        recs = [r for r in records if r.group == g]
        if not recs:
            continue
        out[g] = {"n": len(recs)}
        for m in METRICS:
            v = np.array([getattr(r, m) for r in recs])
            out[g][m] = {"mean": float(v.mean()), "sd": float(v.std())}
    return out


def improvement_pct(cv: float, adb: float) -> float:
    """Relative improvement of the ADB pick over CV, in percent."""
    return 100.0 * (cv - adb) / cv if cv else float("nan")


# -------------------------------------------------------------------- report

@dataclass
class EvalReport:
    seed: int
    models: list
    groups: dict
    cv_baseline: dict
    adb: dict
    improvement_pct: dict
    percentile_rank: float
    p_values: dict
    id_ood_correlation: dict
    shift: dict
    thresholds: dict = field(default_factory=dict)
    permutation_groups: dict = field(default_factory=dict)

    def check(self):
        for r in self.models:
            check_record(r)
        if not 0.0 <= self.percentile_rank <= 100.0:
            raise InputError(f"percentile rank {self.percentile_rank} outside [0, 100]")
        pg = self.permutation_groups
        if pg and sum(pg[g] for g in GROUPS) != pg["M"]:
            raise InputError(f"deviation groups do not partition the {pg['M']} permutations")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["models"] = [asdict(r) for r in self.models]
        return doc

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        try:
            models = [ModelRecord(**m) for m in doc["models"]]
            return cls(**{**doc, "models": models})
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed report document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def models_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "group", *METRICS])
        for r in self.models:
            w.writerow([r.model_id, r.group, *(repr(getattr(r, m)) for m in METRICS)])
        return buf.getvalue()

    def scatter_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id_mae", "ood_mae", "group"])
        for r in self.models:
            w.writerow([repr(r.id_mae), repr(r.ood_mae), r.group])
        return buf.getvalue()


def _jsonable(x):
    """Replace non-finite floats with None so the output is strict JSON."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def read_models_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["id", "group", *METRICS]:
        raise InputError("models CSV header mismatch")
    return [ModelRecord(int(r[0]), r[1], *(float(v) for v in r[2:])) for r in rows[1:]]
