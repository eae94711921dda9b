"""Synthetic regression data with a calibrated out-of-distribution shift.

In-distribution rows follow ``y = x . w + noise`` with standard normal
features. The OOD split keeps the same labelling rule but, starting from a
label-stratified copy of training rows, has every feature column
contracted and the mean moved along ``w``, so
its labels sit in a narrower, offset band, as a label-stratified OOD split
would. One shift strength ``s`` in [0, 1] drives both, and it is tuned by
bisection until the label W1 distance between the train and OOD splits
hits the requested target.

Because each split is standardized with its own column statistics, the
contraction disappears from the OOD inputs but not from the OOD labels:
a model fitted in-distribution over-predicts the OOD spread, and models
that shrink their predictions pay for it in-distribution but gain OOD.

Features of every split are standardized with their own statistics (the
validation split shares the training statistics, being drawn from the same
pool); labels are expressed in training-label standard units throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CalibrationError, InputError
from ..reduction import zscore

# Contraction of the OOD feature spread, and its mean offset along w in
# label units, at full shift strength.
_MAX_CONTRACTION = 0.98
_MAX_OFFSET = 0.6
_CALIBRATION_TOLERANCE = 0.1


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 2000
    n_val: int = 200
    n_ood: int = 1000
    d: int = 8
    label_shift: float = 0.77
    noise_sd: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_ood, self.d) < 1:
            raise InputError("split sizes and d must be positive")
        if self.n_val > self.n_train:
            raise InputError("n_val should be small relative to n_train")
        if self.n_ood > self.n_train - self.n_val:
            raise InputError("n_ood cannot exceed the training rows it is stratified from")
        if self.noise_sd < 0 or self.label_shift < 0:
            raise InputError("noise_sd and label_shift must be >= 0")


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Split":
        return Split(self.X[idx], self.y[idx])


@dataclass
class SyntheticData:
    train: Split
    val: Split
    ood: Split
    spec: SyntheticSpec
    shift_strength: float
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def id_w1(self) -> float:
        return self.meta["id_w1"]

    @property
    def ood_w1(self) -> float:
        return self.meta["ood_w1"]


def w1_labels(a, b) -> float:
    """Exact 1-D Wasserstein-1 distance between two empirical samples.

    Integrates ``|F_a^-1(u) - F_b^-1(u)|`` over the merged quantile
    breakpoints; with equal sizes this is the sorted-sample coupling.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise InputError("w1_labels needs two non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    u = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    du = np.diff(np.concatenate([[0.0], u]))
    # Quantile index for each interval (u_{k-1}, u_k]: ceil(u * n) - 1.
    ia = np.minimum(np.ceil(u * a.size - 1e-9).astype(int) - 1, a.size - 1)
    ib = np.minimum(np.ceil(u * b.size - 1e-9).astype(int) - 1, b.size - 1)
    return float(np.sum(du * np.abs(a[ia] - b[ib])))


def _ood_features(z, u, strength):
    """Contract standard normal draws ``z`` and move their mean along unit vector ``u``."""
    scale = 1.0 - _MAX_CONTRACTION * strength
    return scale * z + (_MAX_OFFSET * strength) * u


def _stratified_holdout(y, n_hold, rng):
    """One row per label stratum, ``n_hold`` strata of near-equal size."""
    order = np.argsort(y, kind="stable")
    strata = np.array_split(order, n_hold)
    return np.array([s[rng.integers(len(s))] for s in strata])


def make_synthetic_shifted_dataset(spec: SyntheticSpec) -> SyntheticData:
    """Train/val/OOD splits with the OOD label W1 tuned to ``spec.label_shift``.

    Raises CalibrationError if the target is outside what the shift family
    can reach (within 10%).
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed) & (2**64 - 1)))
    d = spec.d
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    u = w.copy()

    n_pool = spec.n_train + spec.n_val
    X_pool = rng.standard_normal((n_pool, d))
    y_pool = X_pool @ w + spec.noise_sd * rng.standard_normal(n_pool)
    val_idx = _stratified_holdout(y_pool, spec.n_val, rng)
    mask = np.ones(n_pool, dtype=bool)
    mask[val_idx] = False
    X_tr, y_tr = X_pool[mask], y_pool[mask]
    X_va, y_va = X_pool[val_idx], y_pool[val_idx]

    # OOD rows start as a label-stratified draw of training rows: their
    # projection on w and their noise are copied, the orthogonal part of the
    # features is fresh. At zero strength the OOD labels then follow the
    # training labels as closely as the validation labels do.
    src = _stratified_holdout(y_tr, spec.n_ood, rng)
    t_src = X_tr[src] @ w
    z_ood = rng.standard_normal((spec.n_ood, d))
    z_ood += np.outer(t_src - z_ood @ w, w)
    noise_ood = y_tr[src] - t_src

    y_mean, y_std = y_tr.mean(), y_tr.std()

    def ood_labels(strength):
        X = _ood_features(z_ood, u, strength)
        return X, (X @ w + noise_ood - y_mean) / y_std

    y_tr_std = (y_tr - y_mean) / y_std

    def gap(strength):
        return w1_labels(y_tr_std, ood_labels(strength)[1])

    target = spec.label_shift
    lo, hi = 0.0, 1.0
    if target <= gap(lo):
        strength = 0.0
    elif target >= gap(hi):
        strength = 1.0
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if gap(mid) < target:
                lo = mid
            else:
                hi = mid
        strength = 0.5 * (lo + hi)
    X_ood, y_ood = ood_labels(strength)
    ood_w1 = w1_labels(y_tr_std, y_ood)
    if target > 0 and abs(ood_w1 - target) > _CALIBRATION_TOLERANCE * target:
        raise CalibrationError(
            f"label shift {target} unreachable: best W1 {ood_w1:.3f} at strength {strength:.3f}")

    Xtr_n, mu, sd = zscore(X_tr, "train")
    Xva_n = (X_va - mu) / np.where(sd == 0, 1.0, sd)
    Xood_n = zscore(X_ood, "ood")[0]
    y_va_std = (y_va - y_mean) / y_std
    data = SyntheticData(
        train=Split(Xtr_n, y_tr_std),
        val=Split(Xva_n, y_va_std),
        ood=Split(Xood_n, y_ood),
        spec=spec,
        shift_strength=strength,
        weights=w,
        meta={
            "id_w1": w1_labels(y_tr_std, y_va_std),
            "ood_w1": ood_w1,
            "shift_strength": strength,
            "label_mean": float(y_mean),
            "label_std": float(y_std),
        },
    )
    return data


def check_shift_gate(data: SyntheticData, min_ood: float = 0.6, max_id: float = 0.05):
    """Raise CalibrationError unless OOD W1 >= min_ood and ID W1 <= max_id."""
    if data.ood_w1 < min_ood or data.id_w1 > max_id:
        raise CalibrationError(
            f"shift gate failed: OOD W1 {data.ood_w1:.3f} (need >= {min_ood}), "
            f"ID W1 {data.id_w1:.3f} (need <= {max_id})")
