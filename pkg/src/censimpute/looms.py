"""Duration-weighted leave-one-out mean wages (LOOMs).

LOOMs proxy person, establishment, and occupation fixed effects: for each
spell, the duration-weighted mean of raw-scale wages over the relevant peer
group excluding the unit itself, then logged. Establishment and occupation
means average over a window of adjacent years that shrinks at the first and
last year the group appears in the data.

Naive LOOMs computed from censored wages are contaminated: a fully censored
person's mean collapses to the mean of the censoring limits. The two-stage
scheme therefore first imputes censored wages from a model without LOOMs and
feeds those stage-1 values into the final LOOM computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from censimpute.errors import FitError
from censimpute.panel import CellKey, build_design, partition
from censimpute.rng import substream
from censimpute.tobit import TobitSpec, fit_tobit, impute_tobit


@dataclass
class LoomSet:
    """Per-spell looms (log scale) and their leave-one-out duration sums.

    Series are aligned to the record-store index; NaN marks a loom whose
    peer group is empty (single-spell person, sole worker, ...).
    """

    person: pd.Series
    estab: pd.Series
    occ: pd.Series
    person_support: pd.Series
    estab_support: pd.Series
    occ_support: pd.Series

    def frame(self, store: pd.DataFrame) -> pd.DataFrame:
        """Diagnostic view: spell_id plus looms and support counts."""
        return pd.DataFrame(
            {
                "spell_id": store["spell_id"],
                "person_loom": self.person,
                "estab_loom": self.estab,
                "occ_loom": self.occ,
                "person_support": self.person_support,
                "estab_support": self.estab_support,
                "occ_support": self.occ_support,
            }
        )


def raw_wages(frame: pd.DataFrame, imputed_log: pd.Series | None = None) -> pd.Series:
    """Raw-scale wage per spell: observed, or stage-1 imputed where censored."""
    logw = frame["log_wage"].copy()
    if imputed_log is not None:
        logw.loc[imputed_log.index] = imputed_log
    return np.exp(logw)


def person_loom(frame: pd.DataFrame, wages: pd.Series) -> tuple[pd.Series, pd.Series]:
    """Leave-one-out duration-weighted mean over the person's other spells."""
    _check_wages(wages)
    _check_durations(frame)
    d = frame["duration"].astype(float)
    wd = wages * d
    loo_wd = (wd.groupby(frame["person_id"]).transform("sum") - wd).to_numpy()
    loo_d = (d.groupby(frame["person_id"]).transform("sum") - d).to_numpy()
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(
            loo_d > 0,
            np.log(np.maximum(loo_wd, 1e-300) / np.where(loo_d > 0, loo_d, 1.0)),
            np.nan,
        )
    return pd.Series(vals, index=frame.index), pd.Series(loo_d, index=frame.index)


def estab_loom(frame: pd.DataFrame, wages: pd.Series) -> tuple[pd.Series, pd.Series]:
    """Leave-one-out mean over co-workers in the establishment's year window."""
    return _group_year_loom(frame, wages, "estab_id")


def occ_loom(frame: pd.DataFrame, wages: pd.Series) -> tuple[pd.Series, pd.Series]:
    """Leave-one-out mean over peers in the occupation's year window."""
    return _group_year_loom(frame, wages, "occ_id")


def year_window(year: int, first_year: int, last_year: int) -> list[int]:
    """Years averaged for a group observed in ``year``.

    The window drops the year before a group's first appearance and the year
    after its last; a group seen in a single year keeps just that year.
    """
    window = [year]
    if first_year < year:
        window.insert(0, year - 1)
    if last_year > year:
        window.append(year + 1)
    return window


def _check_wages(wages: pd.Series) -> None:
    if np.any(np.asarray(wages) <= 0):
        raise ValueError("wages must be positive on the raw scale")


def _check_durations(frame: pd.DataFrame) -> None:
    if np.any(frame["duration"].to_numpy(dtype=float) <= 0):
        raise ValueError("spell durations must be positive")


def _group_year_loom(
    frame: pd.DataFrame, wages: pd.Series, group_col: str
) -> tuple[pd.Series, pd.Series]:
    _check_wages(wages)
    _check_durations(frame)
    work = pd.DataFrame(
        {
            "grp": frame[group_col].to_numpy(),
            "person": frame["person_id"].to_numpy(),
            "year": frame["year"].to_numpy(),
            "d": frame["duration"].to_numpy(dtype=float),
        },
        index=frame.index,
    )
    work["wd"] = wages.to_numpy() * work["d"]

    by_gy = work.groupby(["grp", "year"])[["wd", "d"]].sum()
    by_gyp = work.groupby(["grp", "year", "person"])[["wd", "d"]].sum()
    span = work.groupby("grp")["year"].agg(["min", "max"])

    first = span["min"].reindex(work["grp"]).to_numpy()
    last = span["max"].reindex(work["grp"]).to_numpy()
    years = work["year"].to_numpy()

    numer = np.zeros(len(work))
    denom = np.zeros(len(work))
    for offset in (-1, 0, 1):
        if offset == -1:
            active = first < years
        elif offset == 1:
            active = last > years
        else:
            active = np.ones(len(work), dtype=bool)
        key_gy = pd.MultiIndex.from_arrays([work["grp"], work["year"] + offset])
        tot = by_gy.reindex(key_gy).fillna(0.0).to_numpy()
        key_gyp = pd.MultiIndex.from_arrays(
            [work["grp"], work["year"] + offset, work["person"]]
        )
        own = by_gyp.reindex(key_gyp).fillna(0.0).to_numpy()
        numer += active * (tot[:, 0] - own[:, 0])
        denom += active * (tot[:, 1] - own[:, 1])

    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(denom > 0, np.log(np.maximum(numer, 1e-300) / np.where(denom > 0, denom, 1.0)), np.nan)
    return pd.Series(vals, index=frame.index), pd.Series(denom, index=frame.index)


def compute_looms(frame: pd.DataFrame, wages: pd.Series) -> LoomSet:
    """All three looms from one raw-scale wage source."""
    p_loom, p_sup = person_loom(frame, wages)
    e_loom, e_sup = estab_loom(frame, wages)
    o_loom, o_sup = occ_loom(frame, wages)
    return LoomSet(
        person=p_loom,
        estab=e_loom,
        occ=o_loom,
        person_support=p_sup,
        estab_support=e_sup,
        occ_support=o_sup,
    )


Stage1Fitter = Callable[[pd.DataFrame, np.random.Generator], pd.Series]


def default_stage1(covariates: list[str]) -> Stage1Fitter:
    """Right-censored Tobit on the covariates alone (no looms)."""

    def fit(cell: pd.DataFrame, rng: np.random.Generator) -> pd.Series:
        censored = cell["censored"].to_numpy(dtype=bool)
        design = build_design(cell, covariates)
        spec = TobitSpec(
            design=design.values,
            upper_limit=cell["upper_limit"].to_numpy(dtype=float),
            column_names=design.column_names,
        )
        fit_res = fit_tobit(spec, cell["log_wage"].to_numpy(dtype=float), censored.astype(int))
        imputed = impute_tobit(fit_res, spec, censored, rng)
        return pd.Series(imputed, index=cell.index[censored])

    return fit


def two_stage_looms(
    frame: pd.DataFrame,
    covariates: list[str],
    seed: int,
    cells: dict[CellKey, pd.DataFrame] | None = None,
    stage1: Stage1Fitter | None = None,
    skip_cells: set[CellKey] | None = None,
    strict: bool = True,
) -> tuple[LoomSet, pd.Series, dict]:
    """LOOMs free of censoring contamination.

    Stage 1 fits the no-LOOM model per cell and imputes censored wages;
    stage 2 recomputes the looms with observed wages for uncensored spells
    and the stage-1 values for censored ones. Cells listed in ``skip_cells``
    (and, when ``strict`` is off, cells whose stage-1 fit fails) contribute
    their censored spells at the limit value instead; the report counts them.
    Returns the loom set, the stage-2 raw-scale wage source, and a report.
    """
    if cells is None:
        cells = partition(frame)
    stage1 = stage1 or default_stage1(covariates)
    skip_cells = skip_cells or set()

    imputed_parts: list[pd.Series] = []
    report = {"stage1_cells": 0, "stage1_skipped": 0, "stage1_failed": [], "stage1_imputed": 0}
    for key in sorted(cells):
        cell = cells[key]
        n_cens = int(cell["censored"].sum())
        if n_cens == 0:
            continue
        if key in skip_cells:
            report["stage1_skipped"] += 1
            continue
        rng = substream(seed, key.label, purpose=0)
        try:
            part = stage1(cell, rng)
        except FitError as exc:
            if strict:
                raise FitError(f"stage-1 fit failed in cell {key.label}: {exc}") from exc
            report["stage1_failed"].append(key.label)
            continue
        imputed_parts.append(part)
        report["stage1_cells"] += 1
        report["stage1_imputed"] += len(part)

    imputed = pd.concat(imputed_parts) if imputed_parts else None
    wages = raw_wages(frame, imputed)
    return compute_looms(frame, wages), wages, report


def loom_design_columns(
    cell: pd.DataFrame, looms: LoomSet, wages: pd.Series
) -> dict[str, np.ndarray]:
    """Loom regressors for one cell's design.

    Missing looms are filled with the cell-level duration-weighted mean wage
    (log scale), with a companion 0/1 indicator column per loom so the fit
    can absorb any level difference of the filled rows.
    """
    d = cell["duration"].to_numpy(dtype=float)
    w = wages.loc[cell.index].to_numpy(dtype=float)
    fill = float(np.log((w * d).sum() / d.sum()))
    out: dict[str, np.ndarray] = {}
    for name, series in (("person_loom", looms.person), ("estab_loom", looms.estab), ("occ_loom", looms.occ)):
        vals = series.loc[cell.index].to_numpy(dtype=float)
        miss = np.isnan(vals)
        out[name] = np.where(miss, fill, vals)
        out[name + "_missing"] = miss.astype(float)
    return out
