"""Canonical data model: spell records, censor rules, cells, design matrices.

The in-memory record store is a pandas DataFrame with canonical column
names; :class:`SpellRecord` gives the validated per-record view. Ingestion
reconciles censoring flags against the per-(year, region) rules and rejects
records that violate the data contract, reporting counts per reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from censimpute.errors import DataError

#: canonical columns every record store carries
ID_COLUMNS = ["spell_id", "person_id", "estab_id", "occ_id"]
CELL_ATTRIBUTES = ["year", "gender", "age_group", "educ_group", "region"]
BASE_COLUMNS = ID_COLUMNS + ["year", "region", "duration", "log_wage"]


@dataclass
class SpellRecord:
    """One employment spell."""

    spell_id: str
    person_id: str
    estab_id: str
    occ_id: str
    year: int
    region: str
    duration: float
    log_wage: float
    censored: bool
    gender: str = ""
    age_group: str = ""
    educ_group: str = ""
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        self.covariates = np.asarray(self.covariates, dtype=float)


@dataclass(frozen=True)
class CensorRule:
    """Per-(year, region) censoring limits on the log-wage scale."""

    year: int
    region: str
    upper_limit: float
    lower_limit: float | None = None

    def __post_init__(self) -> None:
        if self.lower_limit is not None and self.lower_limit >= self.upper_limit:
            raise ValueError("lower limit must lie below the upper limit")


@dataclass(frozen=True, order=True)
class CellKey:
    """Imputation-cell identifier: year x gender x age group x education x region."""

    year: int
    gender: str
    age_group: str
    educ_group: str
    region: str

    @property
    def label(self) -> str:
        parts = [str(self.year), self.gender, self.age_group, self.educ_group, self.region]
        return "_".join("".join(ch if ch.isalnum() or ch in "-." else "-" for ch in p) for p in parts)


@dataclass
class IngestReport:
    n_read: int = 0
    n_accepted: int = 0
    rejected: dict[str, int] = field(default_factory=dict)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    def add(self, reason: str, count: int) -> None:
        if count:
            self.rejected[reason] = self.rejected.get(reason, 0) + int(count)


def rule_lookup(rules: list[CensorRule]) -> dict[tuple[int, str], CensorRule]:
    lookup: dict[tuple[int, str], CensorRule] = {}
    for rule in rules:
        key = (rule.year, rule.region)
        if key in lookup:
            raise DataError(f"duplicate censor rule for year={rule.year}, region={rule.region}")
        lookup[key] = rule
    return lookup


def attach_limits(frame: pd.DataFrame, rules: list[CensorRule]) -> pd.DataFrame:
    """Adds upper_limit (and lower_limit where defined) columns from the rules."""
    lookup = rule_lookup(rules)
    keys = list(zip(frame["year"].astype(int), frame["region"].astype(str)))
    missing = sorted({k for k in keys if k not in lookup})
    if missing:
        raise DataError(f"no censor rule for (year, region) pairs: {missing[:5]}")
    out = frame.copy()
    out["upper_limit"] = [lookup[k].upper_limit for k in keys]
    lowers = [lookup[k].lower_limit for k in keys]
    if any(lo is not None for lo in lowers):
        out["lower_limit"] = [np.nan if lo is None else lo for lo in lowers]
    return out


def ingest(
    path,
    rules: list[CensorRule],
    schema: dict[str, str] | None = None,
    covariates: list[str] | None = None,
    wage_scale: str = "log",
) -> tuple[pd.DataFrame, IngestReport]:
    """Reads a spell CSV, validates it and reconciles censoring flags.

    ``schema`` maps canonical column names to the file's column names when
    they differ. When the file has no ``censored`` column the flag is derived
    from the rule: wage at or above the limit means censored. Records with
    nonpositive duration, missing mandatory fields, or wage/flag combinations
    that contradict the rules are dropped and counted in the report.
    """
    covariates = covariates or []
    raw = pd.read_csv(path)
    if schema:
        missing_src = [src for src in schema.values() if src not in raw.columns]
        if missing_src:
            raise DataError(f"schema names columns absent from the file: {missing_src}")
        raw = raw.rename(columns={src: dst for dst, src in schema.items()})

    if wage_scale not in ("log", "raw"):
        raise DataError(f"wage_scale must be 'log' or 'raw', got {wage_scale!r}")
    wage_col = "wage" if wage_scale == "raw" else "log_wage"
    mandatory = [c for c in BASE_COLUMNS if c != "log_wage"] + [wage_col]
    mandatory += [c for c in CELL_ATTRIBUTES if c not in mandatory] + covariates
    missing_cols = [c for c in mandatory if c not in raw.columns]
    if missing_cols:
        raise DataError(f"input file is missing columns: {missing_cols}")

    report = IngestReport(n_read=len(raw))
    frame = raw.copy()
    for col in ID_COLUMNS + ["region", "gender", "age_group", "educ_group"]:
        frame[col] = frame[col].astype(str)
    frame["year"] = pd.to_numeric(frame["year"], errors="coerce")
    frame["duration"] = pd.to_numeric(frame["duration"], errors="coerce")
    frame[wage_col] = pd.to_numeric(frame[wage_col], errors="coerce")
    for col in covariates:
        frame[col] = pd.to_numeric(frame[col], errors="coerce")

    ok = frame["year"].notna() & frame["duration"].notna() & frame[wage_col].notna()
    for col in covariates:
        ok &= frame[col].notna()
    report.add("missing_value", (~ok).sum())
    frame = frame[ok]

    bad_duration = frame["duration"] <= 0
    report.add("nonpositive_duration", bad_duration.sum())
    frame = frame[~bad_duration]

    if wage_scale == "raw":
        bad_wage = frame[wage_col] <= 0
        report.add("nonpositive_wage", bad_wage.sum())
        frame = frame[~bad_wage]
        frame["log_wage"] = np.log(frame[wage_col])

    frame["year"] = frame["year"].astype(int)
    frame = attach_limits(frame, rules)
    limit = frame["upper_limit"].to_numpy()
    wage = frame["log_wage"].to_numpy()

    if "censored" in frame.columns:
        flag = _parse_bool(frame["censored"])
        flag_missing = flag.isna().to_numpy()
        flag_on = flag.fillna(False).to_numpy(dtype=bool)
        at_limit = np.isclose(wage, limit, rtol=0.0, atol=1e-9)
        # an explicit uncensored flag with wage at/above the limit, or a
        # censored flag off the limit, contradicts the rules
        bad_above = ~flag_missing & ~flag_on & (wage >= limit)
        bad_mismatch = ~flag_missing & flag_on & ~at_limit
        report.add("missing_value", int(flag_missing.sum()))
        report.add("uncensored_above_limit", int(bad_above.sum()))
        report.add("flag_limit_mismatch", int(bad_mismatch.sum()))
        keep = ~(flag_missing | bad_above | bad_mismatch)
        frame = frame[keep].copy()
        frame["censored"] = flag_on[keep]
    else:
        frame["censored"] = frame["log_wage"].to_numpy() >= frame["upper_limit"].to_numpy()
        # derived flags cannot contradict the rule, but wages strictly above
        # the limit are clamped nowhere: they are re-marked censored at C
        strict_above = frame["log_wage"] > frame["upper_limit"]
        if strict_above.any():
            report.add("wage_clamped_to_limit", strict_above.sum())
            frame.loc[strict_above, "log_wage"] = frame.loc[strict_above, "upper_limit"]

    frame = frame.reset_index(drop=True)
    report.n_accepted = len(frame)
    keep_cols = BASE_COLUMNS + ["gender", "age_group", "educ_group", "censored", "upper_limit"]
    if "lower_limit" in frame.columns:
        keep_cols.append("lower_limit")
    keep_cols += covariates
    return frame[keep_cols], report


def _parse_bool(series: pd.Series) -> pd.Series:
    def conv(v):
        if isinstance(v, (bool, np.bool_)):
            return bool(v)
        if isinstance(v, (int, float, np.integer, np.floating)) and not pd.isna(v):
            return bool(int(v))
        if isinstance(v, str):
            s = v.strip().lower()
            if s in ("true", "t", "1", "yes"):
                return True
            if s in ("false", "f", "0", "no"):
                return False
        return None

    return series.map(conv)


def partition(
    frame: pd.DataFrame,
    levels: dict[str, list] | None = None,
) -> dict[CellKey, pd.DataFrame]:
    """Splits the record store into imputation cells.

    Cells are the cross product of year, gender, age group, education group
    and region actually present in the data. ``levels`` optionally declares
    the admissible values per attribute; records outside them are an error.
    """
    if frame.empty:
        return {}
    for col in CELL_ATTRIBUTES:
        if col not in frame.columns:
            raise DataError(f"record store lacks partition attribute {col!r}")
    if levels:
        for col, allowed in levels.items():
            observed = set(frame[col].unique())
            extra = observed - set(allowed)
            if extra:
                raise DataError(f"attribute {col!r} has undeclared levels: {sorted(extra)}")

    cells: dict[CellKey, pd.DataFrame] = {}
    for key_vals, sub in frame.groupby(CELL_ATTRIBUTES, sort=True):
        key = CellKey(
            year=int(key_vals[0]),
            gender=str(key_vals[1]),
            age_group=str(key_vals[2]),
            educ_group=str(key_vals[3]),
            region=str(key_vals[4]),
        )
        cells[key] = sub
    return cells


def censoring_share(cell: pd.DataFrame) -> float:
    """Fraction of censored records in a cell."""
    if len(cell) == 0:
        raise ValueError("empty cell")
    return float(cell["censored"].mean())


def cell_summary(
    cells: dict[CellKey, pd.DataFrame],
    min_uncensored: int = 200,
    max_censor_share: float = 0.95,
) -> pd.DataFrame:
    """Per-cell record counts, censoring shares, and the fittable flag."""
    rows = []
    for key in sorted(cells):
        sub = cells[key]
        n = len(sub)
        n_cens = int(sub["censored"].sum())
        share = n_cens / n if n else 0.0
        fittable = (n - n_cens) >= min_uncensored and share <= max_censor_share
        rows.append(
            {
                "year": key.year,
                "gender": key.gender,
                "age_group": key.age_group,
                "educ_group": key.educ_group,
                "region": key.region,
                "n": n,
                "n_censored": n_cens,
                "censor_share": share,
                "fittable": fittable,
            }
        )
    return pd.DataFrame(rows)


@dataclass
class DesignMatrix:
    """Validated design: no all-zero columns, intercept (if any) all ones."""

    values: np.ndarray
    column_names: list[str]
    includes_intercept: bool = True
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("design must be 2-d")
        if self.values.shape[1] != len(self.column_names):
            raise ValueError("column_names length does not match design width")
        zero = np.all(self.values == 0, axis=0)
        if zero.any():
            bad = [self.column_names[j] for j in np.flatnonzero(zero)]
            raise ValueError(f"design has all-zero columns: {bad}")
        if self.includes_intercept:
            j = self.column_names.index("intercept") if "intercept" in self.column_names else 0
            if not np.all(self.values[:, j] == 1.0):
                raise ValueError("intercept column must be all ones")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def build_design(
    frame: pd.DataFrame,
    covariates: list[str],
    extras: dict[str, np.ndarray] | None = None,
    add_intercept: bool = True,
) -> DesignMatrix:
    """Assembles the cell design from covariate columns plus extra arrays.

    All-zero columns (e.g. a missing-data indicator when nothing is missing)
    and, when an intercept is present, constant columns are dropped rather
    than left to break the fit; dropped names are recorded on the result.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    dropped: list[str] = []
    n = len(frame)
    if add_intercept:
        names.append("intercept")
        cols.append(np.ones(n))
    source: list[tuple[str, np.ndarray]] = [
        (c, frame[c].to_numpy(dtype=float)) for c in covariates
    ]
    for name, arr in (extras or {}).items():
        source.append((name, np.asarray(arr, dtype=float)))
    for name, arr in source:
        if arr.shape != (n,):
            raise ValueError(f"column {name!r} has wrong length")
        if np.all(arr == 0) or (add_intercept and np.all(arr == arr[0])):
            dropped.append(name)
            continue
        names.append(name)
        cols.append(arr)
    return DesignMatrix(
        values=np.column_stack(cols) if cols else np.empty((n, 0)),
        column_names=names,
        includes_intercept=add_intercept,
        dropped=dropped,
    )


def frame_to_records(frame: pd.DataFrame, covariates: list[str] | None = None) -> list[SpellRecord]:
    """Materializes the per-record view (mainly for inspection and tests)."""
    covariates = covariates or []
    records = []
    for row in frame.itertuples(index=False):
        records.append(
            SpellRecord(
                spell_id=str(row.spell_id),
                person_id=str(row.person_id),
                estab_id=str(row.estab_id),
                occ_id=str(row.occ_id),
                year=int(row.year),
                region=str(row.region),
                duration=float(row.duration),
                log_wage=float(row.log_wage),
                censored=bool(row.censored),
                gender=str(getattr(row, "gender", "")),
                age_group=str(getattr(row, "age_group", "")),
                educ_group=str(getattr(row, "educ_group", "")),
                covariates=np.array([getattr(row, c) for c in covariates], dtype=float),
            )
        )
    return records
