"""Training-order permutations and their distributional deviation trajectories.

A permutation of the ``N`` training rows, cut into consecutive batches of
size ``B`` (the last one may be short), defines ``T = ceil(N / B)`` steps.
At each step the debiased transport distance to the global latent cloud is
measured either for the cumulative prefix seen so far or for the current
batch alone.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ADBError, InputError, ScoringError, StepError
from .transport import PointCloud, SinkhornConfig, debiased_distance, sinkhorn

logger = logging.getLogger(__name__)

CUMULATIVE = "cumulative"
BATCHWISE = "batchwise"
MODES = (CUMULATIVE, BATCHWISE)

# SeedSequence spawn-key namespaces for the independent streams of a run.
_PERMUTATION_STREAM = 0
_SUBSAMPLE_STREAM = 1


def _seed_sequence(seed, *key):
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(key))


@dataclass(frozen=True, eq=False)
class Permutation:
    order: np.ndarray
    id: int

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        n = order.shape[0]
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(n)):
            raise InputError("order must be a bijection on {0, ..., N-1}")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    def __len__(self):
        return self.order.shape[0]

    def __eq__(self, other):
        return (isinstance(other, Permutation) and self.id == other.id
                and np.array_equal(self.order, other.order))


@dataclass(frozen=True)
class BatchSchedule:
    n: int
    batch_size: int

    def __post_init__(self):
        if self.n < 1 or self.batch_size < 1:
            raise InputError(f"need N >= 1 and B >= 1, got N={self.n}, B={self.batch_size}")

    @property
    def step_count(self) -> int:
        return math.ceil(self.n / self.batch_size)

    def batch_slice(self, t: int) -> slice:
        """Positions of 1-based step ``t`` within a permutation."""
        if not 1 <= t <= self.step_count:
            raise InputError(f"step {t} outside 1..{self.step_count}")
        return slice((t - 1) * self.batch_size, min(t * self.batch_size, self.n))

    def prefix_slice(self, t: int) -> slice:
        self.batch_slice(t)
        return slice(0, min(t * self.batch_size, self.n))

    def batches(self, perm: Permutation):
        for t in range(1, self.step_count + 1):
            yield perm.order[self.batch_slice(t)]


@dataclass
class DeviationTrajectory:
    permutation_id: int
    mode: str
    values: np.ndarray
    step_seconds: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.values)


@dataclass
class ScoringRun:
    seed: int
    mode: str
    batch_size: int
    n: int
    epsilon: float
    trajectories: list
    global_cloud_digest: str
    subsample_cap: int | None = None

    @property
    def M(self) -> int:
        return len(self.trajectories)

    @property
    def T(self) -> int:
        return len(self.trajectories[0]) if self.trajectories else 0

    @property
    def values(self) -> np.ndarray:
        """Trajectory matrix, shape ``(M, T)``, rows in permutation-id order."""
        return np.array([tr.values for tr in self.trajectories], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "mode": self.mode,
            "B": int(self.batch_size),
            "M": self.M,
            "N": int(self.n),
            "T": self.T,
            "epsilon": float(self.epsilon),
            "subsample_cap": self.subsample_cap,
            "global_cloud_digest": self.global_cloud_digest,
            "permutation_ids": [int(tr.permutation_id) for tr in self.trajectories],
            "values": [[float(v) for v in tr.values] for tr in self.trajectories],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoringRun":
        try:
            mode = doc["mode"]
            values = doc["values"]
            ids = doc.get("permutation_ids", list(range(len(values))))
            trajectories = [
                DeviationTrajectory(int(i), mode, np.asarray(v, dtype=np.float64))
                for i, v in zip(ids, values)
            ]
            run = cls(
                seed=int(doc["seed"]),
                mode=mode,
                batch_size=int(doc["B"]),
                n=int(doc.get("N", 0)),
                epsilon=float(doc.get("epsilon", SinkhornConfig().epsilon)),
                trajectories=trajectories,
                global_cloud_digest=doc.get("global_cloud_digest", ""),
                subsample_cap=doc.get("subsample_cap"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed trajectories document: {exc}") from exc
        if int(doc.get("M", run.M)) != run.M:
            raise InputError(f"M={doc['M']} but {run.M} trajectories present")
        if len({len(t) for t in trajectories}) > 1:
            raise InputError("trajectories have inconsistent lengths")
        return run

    @classmethod
    def from_json(cls, text: str) -> "ScoringRun":
        return cls.from_dict(json.loads(text))


class Subsampler:
    """Consistent bottom-k subsampling of row sets.

    Every row gets a fixed random priority; a set larger than ``cap`` is
    represented by its ``cap`` highest-priority rows. The full row set thus
    maps to the same subsample as the global cloud, and every subsample is a
    uniform random subset of its parent.
    """

    def __init__(self, n: int, cap: int, seed: int):
        if cap < 1:
            raise InputError("subsample_cap must be >= 1")
        self.cap = cap
        rng = np.random.default_rng(_seed_sequence(seed, _SUBSAMPLE_STREAM))
        self.priority = rng.permutation(n)

    def reduce(self, idx: np.ndarray) -> np.ndarray:
        if len(idx) <= self.cap:
            return idx
        keep = np.argpartition(self.priority[idx], self.cap - 1)[: self.cap]
        return np.sort(idx[keep])


def generate_permutations(N: int, M: int, seed: int) -> list:
    """``M`` independent uniform permutations of ``range(N)``.

    Permutation ``m`` is a Fisher-Yates shuffle driven by its own child
    stream of ``seed``, so it depends only on ``(seed, m)``.
    """
    if N < 1 or M < 1:
        raise InputError(f"need N >= 1 and M >= 1, got N={N}, M={M}")
    return [permutation_for(N, seed, m) for m in range(M)]


def permutation_for(N: int, seed: int, m: int) -> Permutation:
    rng = np.random.default_rng(_seed_sequence(seed, _PERMUTATION_STREAM, m))
    return Permutation(rng.permutation(N), m)


def _check_latents(latents, B):
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError(f"latents must be an (N, d) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("latents contain NaN or Inf")
    if B < 1:
        raise InputError(f"batch size must be >= 1, got {B}")
    return X


def _global_cloud(X, subsampler):
    idx = np.arange(X.shape[0])
    if subsampler is not None:
        idx = subsampler.reduce(idx)
    return PointCloud(X[idx])


def _trajectory(perm, X, B, cfg, mode, global_cloud, global_self, subsampler, timed=False):
    schedule = BatchSchedule(X.shape[0], B)
    if len(perm) != X.shape[0]:
        raise InputError(f"permutation length {len(perm)} != N={X.shape[0]}")
    values = np.empty(schedule.step_count)
    seconds = np.empty(schedule.step_count) if timed else None
    for t in range(1, schedule.step_count + 1):
        start = time.perf_counter()
        if mode == CUMULATIVE:
            rows = perm.order[schedule.prefix_slice(t)]
        else:
            rows = perm.order[schedule.batch_slice(t)]
        # Clouds are sets: canonical row order keeps the solves bit-stable.
        rows = np.sort(rows)
        if subsampler is not None:
            rows = subsampler.reduce(rows)
        try:
            values[t - 1] = debiased_distance(PointCloud(X[rows]), global_cloud, cfg, self_cost_b=global_self)
        except ADBError as exc:
            raise StepError(f"step {t} of permutation {perm.id}: {exc}", t, perm.id) from exc
        if timed:
            seconds[t - 1] = time.perf_counter() - start
    return DeviationTrajectory(perm.id, mode, values, seconds)


def _check_mode(mode):
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")


def cumulative_trajectory(perm: Permutation, latents, B: int, cfg: SinkhornConfig | None = None,
                          subsampler: Subsampler | None = None) -> DeviationTrajectory:
    """Debiased distance of each growing prefix ``S_t`` to the global cloud."""
    cfg = cfg or SinkhornConfig()
    X = _check_latents(latents, B)
    G = _global_cloud(X, subsampler)
    w_gg = sinkhorn(G, G, cfg)[1]
    return _trajectory(perm, X, B, cfg, CUMULATIVE, G, w_gg, subsampler)


def batchwise_trajectory(perm: Permutation, latents, B: int,
                         cfg: SinkhornConfig | None = None,
                         subsampler: Subsampler | None = None) -> DeviationTrajectory:
    """Debiased distance of each individual batch to the global cloud."""
    cfg = cfg or SinkhornConfig()
    X = _check_latents(latents, B)
    G = _global_cloud(X, subsampler)
    w_gg = sinkhorn(G, G, cfg)[1]
    return _trajectory(perm, X, B, cfg, BATCHWISE, G, w_gg, subsampler)


def default_workers() -> int:
    env = os.environ.get("ADB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise InputError(f"ADB_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise InputError("ADB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _score_chunk(args):
    X, B, cfg, mode, seed, ids, cap, global_self, timed = args
    N = X.shape[0]
    subsampler = Subsampler(N, cap, seed) if cap is not None else None
    G = _global_cloud(X, subsampler)
    out, failures = [], []
    for m in ids:
        perm = permutation_for(N, seed, m)
        try:
            out.append(_trajectory(perm, X, B, cfg, mode, G, global_self, subsampler, timed))
        except StepError as exc:
            failures.append(exc)
    return out, failures


def score_all(latents, B: int, M: int, seed: int, mode: str = BATCHWISE,
              cfg: SinkhornConfig | None = None, subsample_cap: int | None = None,
              workers: int | None = None, timed: bool = False) -> ScoringRun:
    """Score ``M`` seeded permutations of the latent rows.

    Permutations are spread over ``workers`` processes (default: the
    ``ADB_THREADS`` environment variable, else the CPU count) and merged in
    permutation-id order; the result does not depend on the worker count.

    With ``subsample_cap`` set, the global cloud and any cumulative prefix
    larger than the cap are replaced by a consistent seeded subsample.
    """
    cfg = cfg or SinkhornConfig()
    _check_mode(mode)
    X = _check_latents(latents, B)
    N = X.shape[0]
    if M < 1:
        raise InputError(f"M must be >= 1, got {M}")
    if subsample_cap is not None and subsample_cap < B:
        raise InputError(f"subsample_cap ({subsample_cap}) must be >= batch size ({B})")
    subsampler = Subsampler(N, subsample_cap, seed) if subsample_cap is not None else None
    G = _global_cloud(X, subsampler)
    global_self = sinkhorn(G, G, cfg)[1]

    workers = min(workers or default_workers(), M)
    ids = list(range(M))
    chunks = [ids[w::workers] for w in range(workers)]
    tasks = [(X, B, cfg, mode, seed, chunk, subsample_cap, global_self, timed) for chunk in chunks]
    if workers == 1:
        results = [_score_chunk(tasks[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_chunk, tasks))
    failures = sorted((f for _, fails in results for f in fails), key=lambda f: f.permutation_id)
    if failures:
        raise ScoringError(
            f"{len(failures)} of {M} permutations failed; first: {failures[0]}", failures)
    trajectories = sorted((tr for chunk, _ in results for tr in chunk), key=lambda tr: tr.permutation_id)
    return ScoringRun(
        seed=seed,
        mode=mode,
        batch_size=B,
        n=N,
        epsilon=cfg.epsilon,
        trajectories=trajectories,
        global_cloud_digest=G.digest(),
        subsample_cap=subsample_cap,
    )

