"""Outlier counting and Low/Medium/High classification of scored permutations."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .sequencing import ScoringRun

LOW = "Low"
MEDIUM = "Medium"
HIGH = "High"
GROUPS = (LOW, MEDIUM, HIGH)

DEFAULT_Q_LOW = 0.35
DEFAULT_Q_HIGH = 0.85


@dataclass
class StepStats:
    means: np.ndarray
    stds: np.ndarray

    @property
    def T(self) -> int:
        return len(self.means)


@dataclass(frozen=True)
class OutlierProfile:
    permutation_id: int
    count: int


@dataclass(frozen=True)
class Thresholds:
    tau_low: int
    tau_high: int
    q_low: float
    q_high: float

    def __post_init__(self):
        if self.tau_low > self.tau_high:
            raise InputError(f"tau_low ({self.tau_low}) > tau_high ({self.tau_high})")
        if not 0 < self.q_low < self.q_high < 1:
            raise InputError(f"need 0 < q_low < q_high < 1, got {self.q_low}, {self.q_high}")


@dataclass(frozen=True)
class GroupAssignment:
    permutation_id: int
    group: str


def _values(run) -> np.ndarray:
    V = run.values if isinstance(run, ScoringRun) else np.asarray(run, dtype=np.float64)
    if V.ndim != 2:
        raise InputError(f"expected an (M, T) trajectory matrix, got shape {V.shape}")
    return V


def _ids(run, M):
    if isinstance(run, ScoringRun):
        return [tr.permutation_id for tr in run.trajectories]
    return list(range(M))


def step_stats(run) -> StepStats:
    """Per-step mean and population standard deviation across permutations.

    ``run`` is a ScoringRun or an ``(M, T)`` array.
    """
    V = _values(run)
    if V.shape[0] < 2:
        raise InputError(f"need at least 2 trajectories, got {V.shape[0]}")
    mean = V.mean(axis=0)
    std = np.sqrt(((V - mean) ** 2).mean(axis=0))
    return StepStats(mean, std)


def outlier_counts(run, stats: StepStats) -> list:
    """Steps at which each trajectory leaves the closed band ``mean +- 2 std``.

    Values on the boundary are inside; at a zero-spread step any value
    different from the mean counts.
    """
    V = _values(run)
    if V.shape[1] != stats.T:
        raise InputError(f"trajectory length {V.shape[1]} != stats length {stats.T}")
    lo = stats.means - 2.0 * stats.stds
    hi = stats.means + 2.0 * stats.stds
    outside = (V < lo) | (V > hi)
    counts = outside.sum(axis=1)
    return [OutlierProfile(int(i), int(c)) for i, c in zip(_ids(run, V.shape[0]), counts)]


def _counts_array(counts) -> np.ndarray:
    arr = np.array([c.count if isinstance(c, OutlierProfile) else c for c in counts], dtype=np.int64)
    if arr.size == 0:
        raise InputError("no outlier counts given")
    return arr


def thresholds_from_quantiles(counts, q_low: float = DEFAULT_Q_LOW, q_high: float = DEFAULT_Q_HIGH) -> Thresholds:
    """Smallest counts whose empirical CDF reaches ``q_low`` and ``q_high``."""
    if not 0 < q_low < q_high < 1:
        raise InputError(f"need 0 < q_low < q_high < 1, got {q_low}, {q_high}")
    c = np.sort(_counts_array(counts))
    n = len(c)
    # CDF(c[k]) >= (k+1)/n, so the first sorted index with (k+1)/n >= q works.
    def tau(q):
        k = int(np.ceil(q * n - 1e-12)) - 1
        return int(c[max(k, 0)])
    return Thresholds(tau(q_low), tau(q_high), q_low, q_high)


def classify(counts, th: Thresholds) -> list:
    out = []
    for i, c in enumerate(counts):
        pid, count = (c.permutation_id, c.count) if isinstance(c, OutlierProfile) else (i, int(c))
        if count <= th.tau_low:
            group = LOW
        elif count <= th.tau_high:
            group = MEDIUM
        else:
            group = HIGH
        out.append(GroupAssignment(pid, group))
    return out


def group_members(assignments) -> dict:
    members = {g: [] for g in GROUPS}
    for a in assignments:
        members[a.group].append(a.permutation_id)
    return members


def count_summary(counts) -> dict:
    """Distribution summary of the outlier counts (shape is reported, not asserted)."""
    c = _counts_array(counts)
    values, freq = np.unique(c, return_counts=True)
    return {
        "mean": float(c.mean()),
        "std": float(c.std()),
        "min": int(c.min()),
        "max": int(c.max()),
        "histogram": {str(int(v)): int(f) for v, f in zip(values, freq)},
    }


@dataclass
class GroupingResult:
    thresholds: Thresholds
    counts: list
    assignments: list

    @property
    def labels(self) -> list:
        return [a.group for a in self.assignments]

    def group_mass(self) -> dict:
        """Both readings of a per-threshold "probability".

        ``group`` is the mass of the Low and High groups; ``point`` is the
        mass of permutations whose count equals each threshold exactly.
        """
        c = _counts_array(self.counts)
        labels = self.labels
        M = len(labels)
        return {
            "group": {g: labels.count(g) / M for g in GROUPS},
            "point": {
                "tau_low": float(np.mean(c == self.thresholds.tau_low)),
                "tau_high": float(np.mean(c == self.thresholds.tau_high)),
            },
        }

    def to_dict(self) -> dict:
        th = self.thresholds
        return {
            "thresholds": {"tau_low": th.tau_low, "tau_high": th.tau_high, "q_low": th.q_low, "q_high": th.q_high},
            "permutation_ids": [c.permutation_id for c in self.counts],
            "counts": [c.count for c in self.counts],
            "labels": self.labels,
            "group_mass": self.group_mass(),
            "count_summary": count_summary(self.counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "GroupingResult":
        try:
            t = doc["thresholds"]
            th = Thresholds(int(t["tau_low"]), int(t["tau_high"]), float(t["q_low"]), float(t["q_high"]))
            counts = doc["counts"]
            ids = doc.get("permutation_ids", list(range(len(counts))))
            labels = doc["labels"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed groups document: {exc}") from exc
        if len(labels) != len(counts) or any(g not in GROUPS for g in labels):
            raise InputError("groups document has inconsistent labels")
        profiles = [OutlierProfile(int(i), int(c)) for i, c in zip(ids, counts)]
        assignments = [GroupAssignment(p.permutation_id, g) for p, g in zip(profiles, labels)]
        return cls(th, profiles, assignments)

    @classmethod
    def from_json(cls, text: str) -> "GroupingResult":
        return cls.from_dict(json.loads(text))


def group_run(run, q_low: float = DEFAULT_Q_LOW, q_high: float = DEFAULT_Q_HIGH,
              thresholds: Thresholds | None = None) -> GroupingResult:
    """Statistics, outlier counts, thresholds and labels for a scored run."""
    stats = step_stats(run)
    counts = outlier_counts(run, stats)
    th = thresholds or thresholds_from_quantiles(counts, q_low, q_high)
    return GroupingResult(th, counts, classify(counts, th))
