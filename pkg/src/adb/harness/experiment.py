"""End-to-end shift experiment: score, group, train, select, compare with CV."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binomtest

from ..errors import DegenerateVarianceError, InputError
from ..grouping import DEFAULT_Q_HIGH, DEFAULT_Q_LOW, GROUPS, group_members, group_run
from ..reduction import fit_reduction
from ..sequencing import BATCHWISE, MODES, default_workers, permutation_for, score_all
from ..transport import SinkhornConfig
from .data import SyntheticSpec, check_shift_gate, make_synthetic_shifted_dataset
from .evaluation import (
    EvalReport, ModelRecord, adb_select, correlation_report, group_aggregates, improvement_pct,
    kfold_cv_baseline, paired_ttest, percentile_rank,
)
from .models import MLP, ModelSpec, TrainConfig, train_with_schedule

logger = logging.getLogger(__name__)

# SeedSequence spawn-key namespaces, disjoint from the scoring streams.
_SCHEDULE_STREAM = 2
_INIT_STREAM = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one experiment; ``train.batch_size`` doubles as the scoring B."""

    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: ModelSpec = field(default_factory=lambda: ModelSpec(MLP, (8,)))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=100))
    M: int = 30
    mode: str = BATCHWISE
    epsilon: float = 0.05
    subsample_cap: int | None = 500
    latent_dim: int = 8
    q_low: float = DEFAULT_Q_LOW
    q_high: float = DEFAULT_Q_HIGH
    models_per_group: int = 10
    sample_size: int = 10
    folds: int = 10
    min_ood_w1: float = 0.6
    max_id_w1: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.M < 3 or self.models_per_group < 1:
            raise InputError("need M >= 3 and models_per_group >= 1")


def _schedule_ids(members, epochs, seed, model_id):
    """Permutation ids for each epoch, drawn from one deviation group.

    Without replacement when the group has at least ``epochs`` members.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1),
                                                       spawn_key=(_SCHEDULE_STREAM, model_id)))
    replace_ = len(members) < epochs
    pick = rng.choice(len(members), size=epochs, replace=replace_)
    return [int(members[i]) for i in pick]


def _init_seed(seed, model_id):
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(_INIT_STREAM, model_id))
    return int(ss.generate_state(1)[0])


def _train_task(args):
    data, spec, cfg, seed, jobs = args
    N = len(data.train)
    out = []
    for model_id, group, ids, init in jobs:
        schedule = [permutation_for(N, seed, m) for m in ids]
        res = train_with_schedule(spec, data, replace(cfg, seed=init), schedule)
        err = np.abs(res.model.predict(data.ood.X) - data.ood.y)
        rec = ModelRecord(model_id, group, res.id_mae, res.id_rmse, res.ood_mae, res.ood_rmse, init, ids)
        out.append((rec, err))
    return out


def _run_jobs(data, spec, cfg, seed, jobs, workers):
    workers = max(1, min(workers, len(jobs)))
    chunks = [jobs[w::workers] for w in range(workers)]
    tasks = [(data, spec, cfg, seed, c) for c in chunks]
    if workers == 1:
        results = [_train_task(tasks[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_task, tasks))
    merged = sorted((item for chunk in results for item in chunk), key=lambda it: it[0].model_id)
    return [r for r, _ in merged], {r.model_id: e for r, e in merged}


def _safe_ttest(a, b):
    try:
        t, p = paired_ttest(a, b)
        return {"t": t, "p": p, "flag": None}
    except DegenerateVarianceError as exc:
        return {"t": None, "p": None, "flag": str(exc)}


def run_experiment(cfg: ExperimentConfig, seed: int, workers: int | None = None) -> EvalReport:
    """One seeded experiment; the report is a pure function of ``(cfg, seed)``."""
    workers = workers or default_workers()
    data = make_synthetic_shifted_dataset(replace(cfg.data, seed=seed))
    check_shift_gate(data, cfg.min_ood_w1, cfg.max_id_w1)
    B = cfg.train.batch_size

    red = fit_reduction(data.train.X, min(cfg.latent_dim, data.train.X.shape[1]))
    latents = red.transform(data.train.X)
    run = score_all(latents, B, cfg.M, seed, cfg.mode, SinkhornConfig(epsilon=cfg.epsilon),
                    subsample_cap=cfg.subsample_cap, workers=workers)
    grouping = group_run(run, cfg.q_low, cfg.q_high)
    members = group_members(grouping.assignments)

    jobs = []
    model_id = 0
    for g in GROUPS:
        if not members[g]:
            logger.warning("seed %d: deviation group %s is empty, no models trained", seed, g)
            continue
        for _ in range(cfg.models_per_group):
            ids = _schedule_ids(members[g], cfg.train.epochs, seed, model_id)
            jobs.append((model_id, g, ids, _init_seed(seed, model_id)))
            model_id += 1
    records, ood_err = _run_jobs(data, cfg.model, cfg.train, seed, jobs, workers)

    cv = kfold_cv_baseline(data, cfg.model, cfg.train, cfg.folds, seed=seed, first_id=model_id)
    sel = adb_select(records, cfg.sample_size, seed)
    chosen = next(r for r in records if r.model_id == sel.selected_id)
    best_cv = cv.best

    adb_err = ood_err[chosen.model_id]
    report = EvalReport(
        seed=int(seed),
        models=records + cv.records,
        groups=group_aggregates(records),
        cv_baseline={"selected_id": best_cv.model_id, "fold_val_mae": cv.fold_val_mae,
                     **best_cv.metrics(), "fold_spread": cv.spread()},
        adb={"selected_id": chosen.model_id, "group": chosen.group, "sampled_ids": sel.sampled_ids,
             "allocation": sel.allocation, **chosen.metrics()},
        improvement_pct={m: improvement_pct(getattr(best_cv, m), getattr(chosen, m))
                         for m in ("ood_mae", "ood_rmse")},
        percentile_rank=percentile_rank(chosen.ood_mae, [r.ood_mae for r in records]),
        p_values={"ood_mae": _safe_ttest(adb_err, cv.ood_abs_errors),
                  "ood_rmse": _safe_ttest(adb_err**2, cv.ood_abs_errors**2)},
        id_ood_correlation=correlation_report(records),
        shift={"ood_w1": data.ood_w1, "id_w1": data.id_w1, "strength": data.shift_strength},
        thresholds=grouping.to_dict()["thresholds"],
        permutation_groups={"M": run.M, **{g: len(members[g]) for g in GROUPS}},
    )
    report.check()
    return report


@dataclass
class Replication:
    reports: list
    negative: int
    defined: int
    binomial_p: float
    adb_ood_mae: np.ndarray
    cv_ood_mae: np.ndarray
    ttest: dict

    def summary(self) -> dict:
        a, c = self.adb_ood_mae, self.cv_ood_mae
        return {
            "seeds": [r.seed for r in self.reports],
            "negative_correlation_seeds": self.negative,
            "defined_correlation_seeds": self.defined,
            "binomial_p": self.binomial_p,
            "adb_ood_mae": {"mean": float(a.mean()), "sd": float(a.std())},
            "cv_ood_mae": {"mean": float(c.mean()), "sd": float(c.std())},
            "improvement_pct": improvement_pct(float(c.mean()), float(a.mean())),
            "paired_ttest": self.ttest,
            "mean_percentile_rank": float(np.mean([r.percentile_rank for r in self.reports])),
        }


def replicate(cfg: ExperimentConfig, seeds, workers: int | None = None, corr_key: str = "Medium+High") -> Replication:
    """Repeat the experiment over ``seeds`` and test the correlation sign.

    The binomial test is one-sided: negative Medium+High correlations in
    more than half of the seeds with a defined correlation.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise InputError("replication needs at least 2 seeds")
    reports = [run_experiment(cfg, s, workers) for s in seeds]
    signs = [r.id_ood_correlation[corr_key]["pearson"] for r in reports]
    signs = [s for s in signs if s is not None]
    negative = sum(s < 0 for s in signs)
    p = binomtest(negative, len(signs), 0.5, alternative="greater").pvalue if signs else float("nan")
    a = np.array([r.adb["ood_mae"] for r in reports])
    c = np.array([r.cv_baseline["ood_mae"] for r in reports])
    return Replication(reports, negative, len(signs), float(p), a, c, _safe_ttest(a, c))
