"""Dataset files (CSV and binary latent) and the line-based run configuration."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .grouping import DEFAULT_Q_HIGH, DEFAULT_Q_LOW
from .harness.experiment import ExperimentConfig
from .harness.models import ModelSpec
from .sequencing import BATCHWISE, MODES

MAGIC = b"ADBL"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray | None = None
    columns: list = field(default_factory=list)
    label: str | None = None


# ----------------------------------------------------------------------- CSV

def _check_finite(X, where):
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        r, c = bad[0]
        raise ParseError(f"{where}: non-finite value at row {r + 1}, column {c + 1}", location=int(r))


def read_csv(path, label: str | None = None) -> Dataset:
    """Numeric CSV with a header row; ``label`` names an optional target column.

    Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row", location=1) from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise ParseError(f"{path}:1: blank column name in header", location=1)
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}", location=line)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(f"{path}:{line}: non-numeric cell {bad!r}", location=line) from None
    if not rows:
        raise ParseError(f"{path}: no data rows", location=2)
    data = np.array(rows, dtype=np.float64)
    _check_finite(data, str(path))
    if label is None:
        return Dataset(data, None, header, None)
    if label not in header:
        raise InputError(f"{path}: label column {label!r} not in header")
    j = header.index(label)
    keep = [i for i in range(len(header)) if i != j]
    if not keep:
        raise InputError(f"{path}: no feature columns besides the label")
    return Dataset(data[:, keep], data[:, j].copy(), [header[i] for i in keep], label)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(path, X, y=None, columns=None, label: str = "y"):
    """Write with ``repr`` floats so a re-read is bit-exact."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"expected a 2-D matrix, got shape {X.shape}")
    columns = list(columns) if columns else [f"x{j}" for j in range(X.shape[1])]
    if len(columns) != X.shape[1]:
        raise InputError("column names do not match the matrix width")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns + ([label] if y is not None else []))
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if y is not None:
                cells.append(repr(float(y[i])))
            w.writerow(cells)


# -------------------------------------------------------------- binary latent

def write_latent(path, X):
    """``ADBL`` magic, version byte, uint32 rows, uint32 cols, then LE float64 row-major."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise InputError(f"expected a 2-D matrix, got shape {X.shape}")
    rows, cols = X.shape
    if rows >= 2**32 or cols >= 2**32:
        raise InputError("matrix too large for the 32-bit header")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
        fh.write(X.tobytes(order="C"))


def read_latent(path) -> np.ndarray:
    """Inverse of write_latent; parse errors report the byte offset."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes)", location=len(raw))
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at offset 0", location=0)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version} at offset 4", location=4)
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise ParseError(f"{path}: payload size mismatch, file has {len(raw)} bytes, header implies {expected}",
                         location=min(len(raw), expected))
    X = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)
    _check_finite(X, str(path))
    return X


def load_dataset(path, label: str | None = None) -> Dataset:
    """Dispatch on content: binary latent files start with the magic bytes."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    if head == MAGIC or path.suffix in (".adbl", ".bin"):
        X = read_latent(path)
        return Dataset(X, None, [f"z{j}" for j in range(X.shape[1])], None)
    return read_csv(path, label)


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    mode: str = BATCHWISE
    B: int = 50
    M: int = 20
    seed: int = 0
    epsilon: float = 0.05
    q_low: float = DEFAULT_Q_LOW
    q_high: float = DEFAULT_Q_HIGH
    subsample_cap: int | None = None
    output_dir: str = "adb_out"
    seeds: int = 20
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.B < 1 or self.M < 2 or self.seeds < 1:
            raise InputError("need B >= 1, M >= 2 and seeds >= 1")
        if not self.epsilon > 0:
            raise InputError("epsilon must be > 0")
        if not 0 < self.q_low < self.q_high < 1:
            raise InputError("need 0 < q_low < q_high < 1")
        if self.subsample_cap is not None and self.subsample_cap < self.B:
            raise InputError("subsample_cap must be >= B")


def _opt_int(s):
    return None if s.lower() in ("none", "off", "") else int(s)


def _widths(s):
    return tuple(int(p) for p in s.split(",") if p.strip())


# key -> (parser, target); target is (object, field) inside the experiment block.
_TOP_KEYS = {
    "mode": str, "B": int, "M": int, "seed": int, "epsilon": float, "q_low": float,
    "q_high": float, "subsample_cap": _opt_int, "output_dir": str, "seeds": int,
}
_EXP_KEYS = {
    "n_train": ("data", int), "n_val": ("data", int), "n_ood": ("data", int), "d": ("data", int),
    "label_shift": ("data", float), "noise_sd": ("data", float),
    "model": ("model", str), "hidden_widths": ("model", _widths),
    "learning_rate": ("train", float), "epochs": ("train", int), "batch_size": ("train", int),
    "perms": ("self", int), "mode": ("self", str), "epsilon": ("self", float),
    "subsample_cap": ("self", _opt_int), "latent_dim": ("self", int),
    "q_low": ("self", float), "q_high": ("self", float), "models_per_group": ("self", int),
    "sample_size": ("self", int), "folds": ("self", int),
}
_MODEL_FIELDS = {"model": "kind"}
_SELF_FIELDS = {"perms": "M"}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines with ``#`` comments and an ``[experiment]`` section.

    Unknown keys, unknown sections and malformed values are ParseErrors
    carrying the line number. Omitted keys keep their defaults.
    """
    top, exp = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[experiment]":
                raise ParseError(f"{source}:{lineno}: unknown section {line}", location=lineno)
            section = "experiment"
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected 'key = value'", location=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        table = _EXP_KEYS if section else _TOP_KEYS
        if key not in table:
            raise ParseError(f"{source}:{lineno}: unknown key {key!r}", location=lineno)
        parser = table[key][1] if section else table[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: bad value for {key}: {value!r}", location=lineno) from exc
        (exp if section else top)[key] = (parsed, lineno)
    try:
        return _build(top, exp)
    except InputError as exc:
        raise ParseError(f"{source}: {exc}") from exc


def _build(top, exp) -> RunConfig:
    base = ExperimentConfig()
    parts = {"data": {}, "model": {}, "train": {}, "self": {}}
    for key, (value, _) in exp.items():
        target = _EXP_KEYS[key][0]
        name = _MODEL_FIELDS.get(key, key) if target == "model" else _SELF_FIELDS.get(key, key)
        parts[target][name] = value
    model_kw = {"kind": base.model.kind, "hidden_widths": base.model.hidden_widths, **parts["model"]}
    experiment = replace(
        base,
        data=replace(base.data, **parts["data"]),
        model=ModelSpec(**model_kw),
        train=replace(base.train, **parts["train"]),
        **parts["self"],
    )
    kw = {k: v for k, (v, _) in top.items()}
    return RunConfig(experiment=experiment, **kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    return parse_config(text, str(path))


def format_config(cfg: RunConfig) -> str:
    """Render every field so that ``parse_config(format_config(c)) == c``."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [f"{k} = {fmt(getattr(cfg, k))}" for k in _TOP_KEYS]
    e = cfg.experiment
    lines.append("")
    lines.append("[experiment]")
    for key, (target, _) in _EXP_KEYS.items():
        if target == "self":
            v = getattr(e, _SELF_FIELDS.get(key, key))
        elif target == "model":
            v = getattr(e.model, _MODEL_FIELDS.get(key, key))
        else:
            v = getattr(getattr(e, target), key)
        lines.append(f"{key} = {fmt(v)}")
    return "\n".join(lines) + "\n"
