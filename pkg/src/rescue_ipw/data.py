"""Trial observations: one row per patient with arm, switch flag, outcome and covariates.

A dataset is stored column-wise in numpy arrays. Post-treatment covariates
``L`` may be absent for a record; absence is tracked by the boolean mask
``l_present`` and the corresponding ``l`` row holds NaN so it can never be
read as a number by accident.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BadValue, EmptyArm, MissingColumn, MissingL

STRATUM_COLUMN = "STRATUM"


@dataclass(frozen=True)
class TrialRecord:
    r: int
    s: int
    y: float
    l: Optional[tuple]
    c: tuple


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Validated, immutable collection of trial records.

    Parameters
    ----------
    r, s : array of {0, 1}
        Arm (1 = active) and rescue-switch indicators.
    y : array of float
        Outcome.
    l : (n, p_l) array
        Post-treatment covariates; rows where ``l_present`` is False are NaN.
    l_present : bool array
    c : (n, p_c) array
        Baseline covariates.
    c_names, l_names : column labels.
    strata : optional per-record labels used by the stratified bootstrap.
    """

    r: np.ndarray
    s: np.ndarray
    y: np.ndarray
    l: np.ndarray
    l_present: np.ndarray
    c: np.ndarray
    c_names: tuple = ()
    l_names: tuple = ()
    strata: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        r = np.asarray(self.r)
        s = np.asarray(self.s)
        n = r.shape[0]
        for name, v in (("R", r), ("S", s)):
            if v.ndim != 1 or v.shape[0] != n:
                raise BadValue(f"{name} must be a vector of length {n}")
            if not np.all((v == 0) | (v == 1)):
                raise BadValue(f"{name} values must be 0 or 1")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != n or not np.all(np.isfinite(y)):
            raise BadValue("Y must be finite for every record")

        c = np.asarray(self.c, dtype=float)
        if c.ndim == 1 and n > 0 and c.shape[0] == n and len(self.c_names) == 1:
            c = c.reshape(n, 1)
        if c.size == 0:
            c = np.zeros((n, len(self.c_names)))
        if c.ndim != 2 or c.shape[0] != n or c.shape[1] != len(self.c_names):
            raise BadValue(f"C must have shape ({n}, {len(self.c_names)})")
        if not np.all(np.isfinite(c)):
            raise BadValue("baseline covariates must be finite")

        present = np.asarray(self.l_present, dtype=bool).reshape(-1)
        if present.shape[0] != n:
            raise BadValue("l_present must have one entry per record")
        pl = len(self.l_names)
        l = np.asarray(self.l, dtype=float)
        if l.size == 0:
            l = np.full((n, pl), np.nan)
        l = l.reshape(n, pl).copy()
        if not np.all(np.isfinite(l[present])):
            raise BadValue("present post-treatment covariates must be finite")
        l[~present] = np.nan

        if not np.any(r == 1) or not np.any(r == 0):
            raise EmptyArm("dataset needs at least one record in each arm")

        strata = self.strata
        if strata is not None:
            strata = np.asarray(strata, dtype=object).reshape(-1)
            if strata.shape[0] != n:
                raise BadValue("strata must have one label per record")
            strata = _readonly(strata.copy())

        object.__setattr__(self, "r", _readonly(r.astype(np.int8)))
        object.__setattr__(self, "s", _readonly(s.astype(np.int8)))
        object.__setattr__(self, "y", _readonly(y.copy()))
        object.__setattr__(self, "c", _readonly(c.copy()))
        object.__setattr__(self, "l", _readonly(l))
        object.__setattr__(self, "l_present", _readonly(present.copy()))
        object.__setattr__(self, "c_names", tuple(self.c_names))
        object.__setattr__(self, "l_names", tuple(self.l_names))
        object.__setattr__(self, "strata", strata)

    @classmethod
    def from_records(cls, records, c_names, l_names, strata=None):
        records = list(records)
        pl = len(l_names)
        n = len(records)
        l = np.full((n, pl), np.nan)
        present = np.zeros(n, dtype=bool)
        for i, rec in enumerate(records):
            if rec.l is not None:
                if len(rec.l) != pl:
                    raise BadValue(f"record {i}: expected {pl} L values")
                l[i] = rec.l
                present[i] = True
            if len(rec.c) != len(c_names):
                raise BadValue(f"record {i}: expected {len(c_names)} C values")
        return cls(
            r=np.array([rec.r for rec in records]),
            s=np.array([rec.s for rec in records]),
            y=np.array([rec.y for rec in records], dtype=float),
            l=l,
            l_present=present,
            c=np.array([rec.c for rec in records], dtype=float).reshape(n, len(c_names)),
            c_names=tuple(c_names),
            l_names=tuple(l_names),
            strata=strata,
        )

    def __len__(self):
        return self.r.shape[0]

    def __getitem__(self, i):
        l = tuple(self.l[i].tolist()) if self.l_present[i] else None
        return TrialRecord(int(self.r[i]), int(self.s[i]), float(self.y[i]), l, tuple(self.c[i].tolist()))

    @property
    def records(self):
        return [self[i] for i in range(len(self))]

    @property
    def n(self):
        return len(self)

    @property
    def treated(self):
        return self.r == 1

    @property
    def control(self):
        return self.r == 0

    @property
    def l_filled(self):
        """L with absent rows replaced by zeros, for masked vectorised arithmetic."""
        return np.where(self.l_present[:, None], self.l, 0.0)

    def require_l(self, arm):
        """Raise MissingL unless every record on ``arm`` carries L."""
        missing = (self.r == arm) & ~self.l_present
        if np.any(missing):
            idx = int(np.flatnonzero(missing)[0])
            raise MissingL(f"record {idx} on arm R={arm} has no post-treatment covariates")

    def take(self, indices):
        """Dataset made of the given record indices (repeats allowed)."""
        idx = np.asarray(indices, dtype=np.intp)
        return TrialDataset(
            r=self.r[idx],
            s=self.s[idx],
            y=self.y[idx],
            l=self.l[idx],
            l_present=self.l_present[idx],
            c=self.c[idx],
            c_names=self.c_names,
            l_names=self.l_names,
            strata=None if self.strata is None else self.strata[idx],
        )

    def flip_arms(self):
        """Same records with the meaning of R=0 and R=1 interchanged."""
        return TrialDataset(
            r=1 - self.r,
            s=self.s,
            y=self.y,
            l=self.l,
            l_present=self.l_present,
            c=self.c,
            c_names=self.c_names,
            l_names=self.l_names,
            strata=self.strata,
        )

    def without_strata(self):
        return TrialDataset(self.r, self.s, self.y, self.l, self.l_present, self.c,
                            self.c_names, self.l_names, None)

    def with_strata(self, strata):
        return TrialDataset(self.r, self.s, self.y, self.l, self.l_present, self.c,
                            self.c_names, self.l_names, strata)

    def summary(self):
        """Row count, arm sizes and switch rates per arm."""
        t, k = self.treated, self.control
        return {
            "n": int(len(self)),
            "n_treated": int(t.sum()),
            "n_control": int(k.sum()),
            "switch_rate_treated": float(self.s[t].mean()),
            "switch_rate_control": float(self.s[k].mean()),
        }

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        if (self.c_names, self.l_names) != (other.c_names, other.l_names):
            return False
        if (self.strata is None) != (other.strata is None):
            return False
        if self.strata is not None and not np.array_equal(self.strata, other.strata):
            return False
        return (
            np.array_equal(self.r, other.r)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.l_present, other.l_present)
            and np.array_equal(self.l, other.l, equal_nan=True)
        )

    __hash__ = None


# --------------------------------------------------------------------------- CSV


@dataclass
class Schema:
    """Column mapping for CSV ingestion.

    ``cols_l`` / ``cols_c`` are either explicit column lists or a single
    prefix string; with a prefix the covariate name is the column name with
    the prefix stripped.
    """

    col_r: str = "R"
    col_s: str = "S"
    col_y: str = "Y"
    cols_l: object = "L_"
    cols_c: object = "C_"
    col_stratum: Optional[str] = None


def _resolve(header, spec, what):
    if isinstance(spec, str):
        cols = [h for h in header if h.startswith(spec)]
        return cols, [h[len(spec):] for h in cols]
    cols = list(spec)
    missing = [c for c in cols if c not in header]
    if missing:
        raise MissingColumn(f"{what} column(s) not found: {', '.join(missing)}")
    return cols, cols


def _number(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise BadValue(f"row {row}: column {col!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise BadValue(f"row {row}: column {col!r} is not finite: {text!r}")
    return v


def _binary(text, row, col):
    v = _number(text, row, col)
    if v not in (0.0, 1.0):
        raise BadValue(f"row {row}: column {col!r} must be 0 or 1, got {text!r}")
    return int(v)


def load_dataset(path, schema: Optional[Schema] = None) -> TrialDataset:
    """Read a trial CSV into a validated :class:`TrialDataset`.

    Empty L fields mark that record's L as absent (all L fields of a record
    must be empty together). Any empty R, S, Y or C field is a ``BadValue``.
    """
    schema = schema or Schema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: no header row") from None
        rows = list(reader)

    for col in (schema.col_r, schema.col_s, schema.col_y):
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in header")
    l_cols, l_names = _resolve(header, schema.cols_l, "L")
    c_cols, c_names = _resolve(header, schema.cols_c, "C")
    stratum_col = schema.col_stratum
    if stratum_col is None and STRATUM_COLUMN in header:
        stratum_col = STRATUM_COLUMN
    if stratum_col is not None and stratum_col not in header:
        raise MissingColumn(f"stratum column {stratum_col!r} not found")

    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    r = np.empty(n, dtype=np.int8)
    s = np.empty(n, dtype=np.int8)
    y = np.empty(n)
    l = np.full((n, len(l_cols)), np.nan)
    present = np.zeros(n, dtype=bool)
    c = np.empty((n, len(c_cols)))
    strata = [] if stratum_col else None
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise BadValue(f"row {i}: expected {len(header)} fields, got {len(row)}")
        k = i - 2
        r[k] = _binary(row[pos[schema.col_r]], i, schema.col_r)
        s[k] = _binary(row[pos[schema.col_s]], i, schema.col_s)
        y[k] = _number(row[pos[schema.col_y]], i, schema.col_y)
        for j, col in enumerate(c_cols):
            c[k, j] = _number(row[pos[col]], i, col)
        raw = [row[pos[col]].strip() for col in l_cols]
        empty = [v == "" for v in raw]
        if l_cols and not any(empty):
            l[k] = [_number(v, i, col) for v, col in zip(raw, l_cols)]
            present[k] = True
        elif l_cols and not all(empty):
            raise BadValue(f"row {i}: L fields must be all present or all empty")
        if strata is not None:
            strata.append(row[pos[stratum_col]])

    if n == 0 or not np.any(r == 1) or not np.any(r == 0):
        raise EmptyArm("dataset needs at least one record in each arm")
    return TrialDataset(r, s, y, l, present, c, tuple(c_names), tuple(l_names),
                        None if strata is None else np.array(strata, dtype=object))


def _fmt(v):
    return format(float(v), ".17g")


def write_dataset(dataset: TrialDataset, path) -> None:
    """Write ``dataset`` as CSV with header ``R,S,Y,L_<name>...,C_<name>...``.

    Absent L values are empty fields; a ``STRATUM`` column is appended when
    the dataset carries strata.
    """
    header = ["R", "S", "Y"] + [f"L_{nm}" for nm in dataset.l_names] + [f"C_{nm}" for nm in dataset.c_names]
    if dataset.strata is not None:
        header.append(STRATUM_COLUMN)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [str(int(dataset.r[i])), str(int(dataset.s[i])), _fmt(dataset.y[i])]
            if dataset.l_present[i]:
                row += [_fmt(v) for v in dataset.l[i]]
            else:
                row += [""] * len(dataset.l_names)
            row += [_fmt(v) for v in dataset.c[i]]
            if dataset.strata is not None:
                row.append(str(dataset.strata[i]))
            w.writerow(row)
