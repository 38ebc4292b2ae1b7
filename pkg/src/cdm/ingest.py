"""Criteo-style CSV loading, writing and dataset splitting."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import CdmError, Dataset, PreconditionError

log = logging.getLogger(__name__)

ORACLE_COLUMNS = ("y0", "y1", "mu0", "mu1", "true_cate")
_FEATURE_RE = re.compile(r"^f\d+$")


class IngestError(CdmError):
    pass


class SchemaError(IngestError):
    pass


class RowError(IngestError):
    def __init__(self, line: int, row: int, message: str):
        super().__init__(f"line {line} (data row {row}): {message}")
        self.line = line
        self.row = row


@dataclass(frozen=True)
class CsvSchema:
    feature_columns: tuple[str, ...]
    treatment_column: str = "treatment"
    outcome_column: str = "outcome"
    propensity_column: Optional[str] = None
    constant_propensity: Optional[float] = None
    # read y0/y1/mu0/mu1 when all four columns are present
    load_oracle: bool = True

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.feature_columns:
            raise SchemaError("schema needs at least one feature column")
        names = list(self.feature_columns) + [self.treatment_column, self.outcome_column]
        if self.propensity_column is not None:
            names.append(self.propensity_column)
        dupes = sorted({c for c in names if names.count(c) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names in schema: {', '.join(dupes)}")
        if self.propensity_column is not None and self.constant_propensity is not None:
            raise SchemaError("declare either propensity_column or constant_propensity, not both")
        if self.constant_propensity is not None and not 0.0 < self.constant_propensity < 1.0:
            raise SchemaError("constant_propensity must lie strictly inside (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {', '.join(sorted(unknown))}")
        if "feature_columns" not in d:
            raise SchemaError("schema is missing 'feature_columns'")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CsvSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def infer(cls, header: Sequence[str]) -> "CsvSchema":
        """Default layout: f<k> features, treatment, outcome, optional propensity."""
        features = tuple(c for c in header if _FEATURE_RE.match(c))
        return cls(
            feature_columns=features,
            propensity_column="propensity" if "propensity" in header else None,
        )


def _parse_float(text: str, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"column {column!r}: non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"column {column!r}: non-finite value {text!r}")
    return v


def read_csv(path, schema: Optional[CsvSchema] = None, skip_bad_rows: bool = False) -> tuple[Dataset, int]:
    """Load ``path`` and return the dataset plus the number of skipped rows.

    Rows are validated one by one. The first bad row aborts the load unless
    ``skip_bad_rows`` is set, in which case it is counted and dropped.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (a header row is required)") from None
        header = [h.strip() for h in header]
        if schema is None:
            schema = CsvSchema.infer(header)
        pos = {name: i for i, name in enumerate(header)}
        required = list(schema.feature_columns) + [schema.treatment_column, schema.outcome_column]
        if schema.propensity_column is not None:
            required.append(schema.propensity_column)
        for col in required:
            if col not in pos:
                raise SchemaError(f"{path}: missing declared column {col!r}")
        oracle = schema.load_oracle and all(c in pos for c in ORACLE_COLUMNS[:4])

        fcols = [pos[c] for c in schema.feature_columns]
        tcol, ycol = pos[schema.treatment_column], pos[schema.outcome_column]
        ecol = pos.get(schema.propensity_column) if schema.propensity_column else None
        ocols = [pos[c] for c in ORACLE_COLUMNS[:4]] if oracle else []

        X, t, y, e, orc = [], [], [], [], []
        skipped = 0
        for row_no, row in enumerate(reader, start=1):
            line = row_no + 1
            if not row:
                continue
            try:
                if len(row) < len(header):
                    raise ValueError(f"expected {len(header)} fields, found {len(row)}")
                feats = [_parse_float(row[j], header[j]) for j in fcols]
                tv = row[tcol].strip()
                if tv not in ("0", "1", "0.0", "1.0"):
                    raise ValueError(f"column {header[tcol]!r}: treatment must be 0 or 1, got {tv!r}")
                yv = _parse_float(row[ycol], header[ycol])
                if ecol is not None:
                    ev = _parse_float(row[ecol], header[ecol])
                    if not 0.0 < ev < 1.0:
                        raise ValueError(f"column {header[ecol]!r}: propensity {ev} outside (0, 1)")
                ov = [_parse_float(row[j], header[j]) for j in ocols]
            except ValueError as exc:
                if not skip_bad_rows:
                    raise RowError(line, row_no, str(exc)) from None
                skipped += 1
                log.debug("skipping %s line %d: %s", path, line, exc)
                continue
            X.append(feats)
            t.append(int(float(tv)))
            y.append(yv)
            if ecol is not None:
                e.append(ev)
            if oracle:
                orc.append(ov)

    if skipped:
        log.warning("%s: skipped %d bad rows", path, skipped)
    if not X:
        raise IngestError(f"{path}: no valid data rows")
    n = len(X)
    if ecol is not None:
        propensity = np.asarray(e)
    elif schema.constant_propensity is not None:
        propensity = np.full(n, schema.constant_propensity)
    else:
        propensity = None
    kw = {}
    if oracle:
        o = np.asarray(orc)
        kw = dict(y0=o[:, 0], y1=o[:, 1], mu0=o[:, 2], mu1=o[:, 3])
    try:
        ds = Dataset(
            X=np.asarray(X, dtype=float).reshape(n, len(fcols)),
            treatment=np.asarray(t),
            outcome=np.asarray(y),
            propensity=propensity,
            name=path.stem,
            feature_names=schema.feature_columns,
            **kw,
        )
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    return ds, skipped


def load_csv(path, schema: Optional[CsvSchema] = None, skip_bad_rows: bool = False) -> Dataset:
    return read_csv(path, schema, skip_bad_rows)[0]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(dataset: Dataset, path, include_oracle: bool = False) -> None:
    """Write ``dataset`` with header ``<features>,treatment,outcome[,propensity]``.

    Floats use shortest round-trip formatting, so loading the file back
    reproduces every observable field exactly. ``include_oracle`` appends
    y0, y1, mu0, mu1 and true_cate.
    """
    if include_oracle and not dataset.is_synthetic:
        raise PreconditionError("include_oracle requires a synthetic dataset")
    path = Path(path)
    header = list(dataset.columns) + ["treatment", "outcome"]
    cols = [dataset.X[:, j] for j in range(dataset.n_features)]
    cols += [dataset.treatment, dataset.outcome]
    if dataset.propensity is not None:
        header.append("propensity")
        cols.append(dataset.propensity)
    if include_oracle:
        header += list(ORACLE_COLUMNS)
        cols += [dataset.y0, dataset.y1, dataset.mu0, dataset.mu1, dataset.true_cate]
    t_idx = dataset.n_features
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(dataset.n):
                fields = [str(int(c[i])) if j == t_idx else _fmt(c[i]) for j, c in enumerate(cols)]
                fh.write(",".join(fields) + "\n")
    except OSError as exc:
        raise IngestError(f"cannot write {path}: {exc.strerror}") from exc


# -- splitting ---------------------------------------------------------------


def _boundaries(n: int, fractions: np.ndarray) -> np.ndarray:
    cuts = np.rint(np.cumsum(fractions) * n).astype(int)
    cuts[-1] = n
    return np.concatenate([[0], cuts])


def split(dataset: Dataset, fractions: Sequence[float], seed: int = 0,
          stratify_by_treatment: bool = False) -> list[Dataset]:
    """Seeded shuffle, then partition by ``fractions``.

    With stratification each arm is shuffled and partitioned separately so
    every part keeps the parent's treated fraction.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise PreconditionError("fractions must be positive and sum to 1")
    rng = np.random.default_rng(seed)
    groups = [np.arange(dataset.n)]
    if stratify_by_treatment:
        groups = [np.flatnonzero(dataset.treatment == 0), np.flatnonzero(dataset.treatment == 1)]
    parts = [[] for _ in fr]
    for g in groups:
        if g.size == 0:
            continue
        perm = g[rng.permutation(g.size)]
        b = _boundaries(g.size, fr)
        for k in range(fr.size):
            parts[k].append(perm[b[k]:b[k + 1]])
    out = []
    for k, chunks in enumerate(parts):
        idx = np.sort(np.concatenate(chunks))
        if idx.size == 0:
            raise PreconditionError(f"split part {k} would be empty")
        out.append(dataset.subset(idx, name=f"{dataset.name}[part{k}]"))
    return out


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    if not 2 <= k <= n:
        raise PreconditionError(f"k must lie in [2, n={n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(k)]


def kfold(dataset: Dataset, k: int, seed: int = 0) -> list[tuple[Dataset, Dataset]]:
    """k (train, test) pairs; every unit lands in exactly one test fold."""
    folds = kfold_indices(dataset.n, k, seed)
    pairs = []
    for i, test_idx in enumerate(folds):
        mask = np.ones(dataset.n, dtype=bool)
        mask[test_idx] = False
        pairs.append((dataset.subset(mask, name=f"{dataset.name}[train{i}]"),
                      dataset.subset(test_idx, name=f"{dataset.name}[test{i}]")))
    return pairs
