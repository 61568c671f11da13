"""Batch orchestration: partition, two-stage looms, fit all methods, impute,
select per cell, evaluate, and export reports.

Each cell is processed independently (optionally on a worker pool); per-cell
random substreams are derived from the master seed and the cell label, so
outputs do not depend on scheduling. A failure inside one cell downgrades
that cell to pass-through and never disturbs the others.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

import censimpute
from censimpute.config import MethodSpec, PipelineConfig
from censimpute.cqr import (
    coefficient_profile,
    extrapolate_profile,
    fit_at_largest_quantile,
    impute_cqr_at_limit,
    impute_cqr_extrapolated,
)
from censimpute.density import kde, silverman_bandwidth, uniform_grid
from censimpute.errors import CensImputeError, ConfigError, DataError, FitError
from censimpute.evaluation import metrics_report, quadratic_eval_design
from censimpute.looms import loom_design_columns, two_stage_looms
from censimpute.panel import CellKey, build_design, cell_summary, ingest, partition
from censimpute.rng import substream
from censimpute.selection import SadParams, SelectionReport, select_method
from censimpute.tobit import (
    TobitSpec,
    artificial_lower_limit,
    fit_tobit,
    impute_tobit,
    mark_lower,
)

#: rng purpose indices; stage-1 imputation inside two_stage_looms uses 0
_PURPOSE = {"tobit_r": 1, "tobit_lr": 2, "cqr_at_limit": 3, "cqr_extrapolated": 4}


@dataclass
class CellOutcome:
    key: CellKey
    n: int
    n_censored: int
    unfittable: bool = False
    error: str | None = None
    candidates: dict[str, np.ndarray] = field(default_factory=dict)
    fit_reports: dict[str, dict] = field(default_factory=dict)
    selection: SelectionReport | None = None
    censored_index: np.ndarray | None = None
    extra_draws: dict[int, np.ndarray] = field(default_factory=dict)
    fallback_rows: int = 0

    @property
    def chosen(self) -> str | None:
        return self.selection.chosen if self.selection is not None else None


@dataclass
class RunResult:
    store: pd.DataFrame
    outcomes: dict[CellKey, CellOutcome]
    summary: pd.DataFrame
    loom_report: dict
    status: int  # 0 complete, 2 partial (some cells passed through)
    loom_frame: pd.DataFrame | None = None

    def outcome_rows(self) -> pd.DataFrame:
        rows = []
        for key in sorted(self.outcomes):
            o = self.outcomes[key]
            row = {
                "cell": key.label,
                "n": o.n,
                "n_censored": o.n_censored,
                "unfittable": o.unfittable,
                "error": o.error or "",
                "chosen": o.chosen or "none",
                "fallback_rows": o.fallback_rows,
            }
            rows.append(row)
        return pd.DataFrame(rows)


def _cell_limit(frame: pd.DataFrame) -> float:
    limits = frame["upper_limit"].to_numpy(dtype=float)
    if np.ptp(limits) > 1e-9:
        raise FitError("cell spans multiple censoring limits")
    return float(limits[0])


def _process_cell(payload: dict) -> CellOutcome:
    key: CellKey = payload["key"]
    frame: pd.DataFrame = payload["frame"]
    loom_cols: dict[str, np.ndarray] = payload["loom_cols"]
    covariates: list[str] = payload["covariates"]
    methods: list[MethodSpec] = payload["methods"]
    sad_params: SadParams = payload["sad_params"]
    seed: int = payload["seed"]
    draws: int = payload["draws"]
    cqr_delta: float = payload["cqr_delta"]
    cqr_zeta: float = payload["cqr_zeta"]
    profile_penalty: float = payload["profile_penalty"]
    profile_min_q: float = payload["profile_min_q"]
    profile_invert: bool = payload["profile_invert"]

    censored = frame["censored"].to_numpy(dtype=bool)
    outcome = CellOutcome(
        key=key,
        n=len(frame),
        n_censored=int(censored.sum()),
        censored_index=frame.index.to_numpy()[censored],
    )
    if outcome.n_censored == 0:
        return outcome

    try:
        y = frame["log_wage"].to_numpy(dtype=float)
        state = censored.astype(int)
        design = build_design(frame, covariates, extras=loom_cols)
        spec = TobitSpec(
            design=design.values,
            upper_limit=frame["upper_limit"].to_numpy(dtype=float),
            column_names=design.column_names,
        )
        _cell_limit(frame)

        tobit_cache: dict[str, object] = {}

        def right_tobit():
            if "fit" not in tobit_cache:
                tobit_cache["fit"] = fit_tobit(spec, y, state)
            return tobit_cache["fit"]

        def impute_once(mspec: MethodSpec, rng) -> np.ndarray:
            if mspec.kind == "tobit_r":
                fit = right_tobit()
                outcome.fit_reports.setdefault(mspec.label, fit.to_report())
                return impute_tobit(fit, spec, censored, rng)
            if mspec.kind == "tobit_lr":
                floor = artificial_lower_limit(y, state, mspec.lower_quantile)
                state_lr = mark_lower(state, y, floor)
                spec_lr = TobitSpec(
                    design=design.values,
                    upper_limit=spec.upper_limit,
                    lower_limit=np.full(len(frame), floor),
                    column_names=design.column_names,
                )
                fit = fit_tobit(spec_lr, y, state_lr)
                report = fit.to_report()
                report["artificial_lower_limit"] = floor
                outcome.fit_reports.setdefault(mspec.label, report)
                return impute_tobit(fit, spec_lr, censored, rng)
            if mspec.kind == "cqr_at_limit":
                fit, q_c = fit_at_largest_quantile(
                    spec, y, state, delta=cqr_delta, zeta_mult=cqr_zeta
                )
                resid_sd = float(np.sqrt(right_tobit().resid_var))
                report = fit.to_report()
                report.update({"q_c": q_c, "resid_sd": resid_sd})
                outcome.fit_reports.setdefault(mspec.label, report)
                return impute_cqr_at_limit(fit, spec, resid_sd, censored, rng)
            if mspec.kind == "cqr_extrapolated":
                profile = coefficient_profile(
                    spec, y, state, delta=cqr_delta, zeta_mult=cqr_zeta
                )
                extrap = extrapolate_profile(
                    profile,
                    penalty=profile_penalty,
                    min_quantile=profile_min_q,
                    invert_weights=profile_invert,
                )
                tob = right_tobit()

                def fallback(rows: np.ndarray) -> np.ndarray:
                    return impute_tobit(tob, spec, rows, rng)

                values, fb_mask = impute_cqr_extrapolated(extrap, spec, censored, rng, fallback)
                outcome.fallback_rows += int(fb_mask.sum())
                outcome.fit_reports.setdefault(
                    mspec.label,
                    {"q_c": profile.q_c, "fallback_rows": int(fb_mask.sum())},
                )
                return values
            raise ConfigError(f"unknown method kind {mspec.kind!r}")

        limits = frame.loc[frame.index[censored], "upper_limit"].to_numpy(dtype=float)
        for mspec in methods:
            rng = substream(seed, key.label, purpose=_PURPOSE[mspec.kind])
            try:
                values = impute_once(mspec, rng)
                # support contract: every imputed value sits at or above the
                # limit (strictly above for the truncated-normal methods)
                if np.any(values < limits - 1e-12):
                    raise FitError(
                        f"{int((values < limits).sum())} imputed values below the limit"
                    )
                outcome.candidates[mspec.label] = values
            except (CensImputeError, ValueError) as exc:
                outcome.fit_reports[mspec.label] = {"error": str(exc)}

        if not outcome.candidates:
            outcome.error = "all methods failed"
            return outcome

        outcome.selection = select_method(
            key,
            observed_uncensored=y[~censored],
            candidates=outcome.candidates,
            limit=_cell_limit(frame),
            params=sad_params,
        )

        if draws > 1:
            chosen_spec = next(m for m in methods if m.label == outcome.selection.chosen)
            for k in range(2, draws + 1):
                rng = substream(seed, key.label, purpose=10 * k + _PURPOSE[chosen_spec.kind])
                outcome.extra_draws[k] = impute_once(chosen_spec, rng)
    except (CensImputeError, ValueError) as exc:
        outcome.error = str(exc)
    return outcome


def impute_store(
    store: pd.DataFrame, config: PipelineConfig, covariates: list[str] | None = None
) -> RunResult:
    """Runs the imputation pipeline on a prepared record store.

    The store must carry the canonical columns plus ``upper_limit`` and
    ``censored`` (as :func:`censimpute.panel.ingest` produces). Uncensored
    wages pass through bit-exact; censored rows get the imputation of the
    per-cell selected method, or pass through flagged when the cell is
    unfittable.
    """
    config.validate()
    covariates = list(covariates if covariates is not None else config.covariates)
    cells = partition(store)
    if not cells:
        raise DataError("record store is empty")
    summary = cell_summary(cells, config.min_uncensored, config.max_censor_share)
    unfittable = {
        key for key in cells
        if not summary.loc[
            (summary["year"] == key.year)
            & (summary["gender"] == key.gender)
            & (summary["age_group"] == key.age_group)
            & (summary["educ_group"] == key.educ_group)
            & (summary["region"] == key.region),
            "fittable",
        ].iloc[0]
    }

    looms, wages, loom_report = two_stage_looms(
        store, covariates, config.seed, cells=cells, skip_cells=unfittable, strict=False
    )

    payloads = []
    outcomes: dict[CellKey, CellOutcome] = {}
    for key in sorted(cells):
        cell = cells[key]
        censored = cell["censored"].to_numpy(dtype=bool)
        if key in unfittable:
            outcomes[key] = CellOutcome(
                key=key,
                n=len(cell),
                n_censored=int(censored.sum()),
                unfittable=True,
                censored_index=cell.index.to_numpy()[censored],
            )
            continue
        payloads.append(
            {
                "key": key,
                "frame": cell,
                "loom_cols": loom_design_columns(cell, looms, wages),
                "covariates": covariates,
                "methods": config.method_specs,
                "sad_params": config.sad_params(),
                "seed": config.seed,
                "draws": config.draws,
                "cqr_delta": config.cqr_delta,
                "cqr_zeta": config.cqr_zeta_mult,
                "profile_penalty": config.profile_penalty,
                "profile_min_q": config.profile_min_quantile,
                "profile_invert": config.profile_invert_weights,
            }
        )

    if config.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_process_cell, payloads))
    else:
        results = [_process_cell(p) for p in payloads]
    for res in results:
        outcomes[res.key] = res

    out = store.copy()
    out["imputed_log_wage"] = out["log_wage"]
    out["method_used"] = "none"
    out["cell"] = ""
    for key in sorted(cells):
        out.loc[cells[key].index, "cell"] = key.label
    partial = False
    for key in sorted(outcomes):
        o = outcomes[key]
        if o.unfittable or o.error:
            partial = partial or o.n_censored > 0
            continue
        if o.n_censored == 0:
            continue
        chosen = o.chosen
        out.loc[o.censored_index, "imputed_log_wage"] = o.candidates[chosen]
        out.loc[o.censored_index, "method_used"] = chosen
        for k, vals in o.extra_draws.items():
            col = f"imputed_log_wage_d{k}"
            if col not in out.columns:
                out[col] = out["log_wage"]
            out.loc[o.censored_index, col] = vals

    return RunResult(
        store=out,
        outcomes=outcomes,
        summary=summary,
        loom_report={k: v for k, v in loom_report.items()},
        status=2 if partial else 0,
        loom_frame=looms.frame(store) if config.loom_dump else None,
    )


def _needed_columns(config: PipelineConfig, include_eval: bool) -> list[str]:
    cols = list(config.covariates)
    if include_eval:
        for item in config.eval_covariates:
            base = item.strip()
            base = base[:-2] if base.endswith("^2") else base
            if base not in cols:
                cols.append(base)
    return cols


def load_store(config: PipelineConfig, include_eval: bool = False) -> pd.DataFrame:
    path = config.resolve(config.input)
    if path is None or not Path(path).exists():
        raise ConfigError(f"input file not found: {path}")
    if not config.censor_rules:
        raise ConfigError("no censor rules configured")
    store, report = ingest(
        path,
        rules=list(config.censor_rules),
        schema=config.schema or None,
        covariates=_needed_columns(config, include_eval),
        wage_scale=config.wage_scale,
    )
    store.attrs["ingest_report"] = {"n_read": report.n_read, "rejected": report.rejected}
    return store


def load_truth(config: PipelineConfig, store: pd.DataFrame) -> pd.Series:
    path = config.resolve(config.truth)
    if path is None or not Path(path).exists():
        raise ConfigError(f"ground-truth file not found: {path}")
    truth_frame = pd.read_csv(path, dtype={"spell_id": str})
    if not {"spell_id", "true_log_wage"} <= set(truth_frame.columns):
        raise DataError("truth file needs columns spell_id, true_log_wage")
    merged = store[["spell_id"]].merge(truth_frame, on="spell_id", how="left")
    if merged["true_log_wage"].isna().any():
        raise DataError("truth file does not cover every spell in the store")
    return pd.Series(merged["true_log_wage"].to_numpy(), index=store.index)


def run_impute(config: PipelineConfig) -> tuple[RunResult, Path]:
    store = load_store(config)
    result = impute_store(store, config)
    out_dir = write_impute_outputs(result, config)
    return result, out_dir


def write_impute_outputs(result: RunResult, config: PipelineConfig) -> Path:
    out_dir = config.resolve(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.store.to_csv(out_dir / "imputed.csv", index=False)
    result.summary.to_csv(out_dir / "cells.csv", index=False)

    sel_rows = []
    for key in sorted(result.outcomes):
        o = result.outcomes[key]
        if o.selection is not None:
            sel_rows.append(o.selection.as_row())
    pd.DataFrame(sel_rows).to_csv(out_dir / "selection.csv", index=False)
    result.outcome_rows().to_csv(out_dir / "outcomes.csv", index=False)

    fits = {
        key.label: result.outcomes[key].fit_reports
        for key in sorted(result.outcomes)
        if result.outcomes[key].fit_reports
    }
    (out_dir / "fits.json").write_text(json.dumps(fits, indent=2, sort_keys=True))
    if result.loom_frame is not None:
        result.loom_frame.to_csv(out_dir / "looms.csv", index=False)
    _write_manifest(out_dir, config, result)
    return out_dir


def _write_manifest(out_dir: Path, config: PipelineConfig, result: RunResult) -> None:
    lines = [
        f"censimpute_version={censimpute.__version__}",
        f"config_sha256={config.digest()}",
        f"seed={config.seed}",
        f"n_records={len(result.store)}",
        f"n_cells={len(result.outcomes)}",
        f"n_unfittable={sum(o.unfittable for o in result.outcomes.values())}",
        f"n_cell_errors={sum(1 for o in result.outcomes.values() if o.error)}",
        f"status={result.status}",
    ]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# evaluation workflow


def evaluate_store(
    store: pd.DataFrame,
    truth: pd.Series,
    config: PipelineConfig,
    result: RunResult | None = None,
) -> tuple[pd.DataFrame, pd.DataFrame, RunResult]:
    """Per-cell, per-method quality measures against known true wages.

    Returns (metrics long-format frame, agreement summary, run result). The
    agreement summary reports, per quality measure, the fraction of scored
    cells where the smoothness criterion's choice also attains the best
    value of that measure.
    """
    if result is None:
        result = impute_store(store, config)
    if len(truth) != len(store):
        raise DataError("truth/imputation row mismatch")

    cells = partition(store)
    rows = []
    for key in sorted(result.outcomes):
        o = result.outcomes[key]
        if not o.candidates:
            continue
        cell = cells[key]
        censored = cell["censored"].to_numpy(dtype=bool)
        t = truth.loc[cell.index].to_numpy(dtype=float)
        eval_design = quadratic_eval_design(cell, list(config.eval_covariates))
        base = cell["log_wage"].to_numpy(dtype=float)
        for label in sorted(o.candidates, key=_label_rank):
            imputed = base.copy()
            imputed[censored] = o.candidates[label]
            rep = metrics_report(
                t,
                imputed,
                eval_design,
                sad_score=o.selection.scores.get(label) if o.selection else None,
            )
            row = {"cell": key.label, "method": label, "chosen": label == o.chosen}
            row.update(rep.as_row())
            rows.append(row)
    metrics = pd.DataFrame(rows)

    agreement_rows = []
    if not metrics.empty:
        lower_better = ["mse_pred", "mae_pred", "msd_coef_x100", "mad_coef_x100", "kl_div_x100"]
        for measure in lower_better:
            agree = 0
            total = 0
            for cell_label, sub in metrics.groupby("cell"):
                if len(sub) < 2 or not sub["chosen"].any():
                    continue
                total += 1
                best = sub.loc[sub[measure].idxmin(), "method"]
                chosen = sub.loc[sub["chosen"], "method"].iloc[0]
                agree += best == chosen
            agreement_rows.append(
                {
                    "measure": measure,
                    "cells": total,
                    "agreement": agree / total if total else np.nan,
                }
            )
    agreement = pd.DataFrame(agreement_rows)
    return metrics, agreement, result


def write_evaluate_outputs(
    metrics: pd.DataFrame, agreement: pd.DataFrame, config: PipelineConfig
) -> Path:
    out_dir = config.resolve(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.to_csv(out_dir / "metrics.csv", index=False)
    agreement.to_csv(out_dir / "agreement.csv", index=False)
    # per-cell table: measures as rows, methods as columns
    for cell_label, sub in metrics.groupby("cell"):
        table = sub.drop(columns=["cell", "chosen"]).set_index("method").T
        table.to_csv(out_dir / f"metrics_{cell_label}.csv")
    return out_dir


def run_evaluate(config: PipelineConfig) -> tuple[pd.DataFrame, pd.DataFrame, RunResult]:
    store = load_store(config, include_eval=True)
    truth = load_truth(config, store)
    metrics, agreement, result = evaluate_store(store, truth, config)
    write_evaluate_outputs(metrics, agreement, config)
    return metrics, agreement, result


# ---------------------------------------------------------------------------
# density and profile exports


def export_densities(
    store: pd.DataFrame, config: PipelineConfig, result: RunResult | None = None
) -> dict[str, pd.DataFrame]:
    """Plot-ready per-cell densities for every candidate method.

    Each cell maps to a frame with the grid, one ordinate column per method,
    the censoring limit and the scoring-window bounds; the grid step matches
    the configured scoring step.
    """
    if result is None:
        result = impute_store(store, config)
    cells = partition(store)
    params = config.sad_params()
    out: dict[str, pd.DataFrame] = {}
    for key in sorted(result.outcomes):
        o = result.outcomes[key]
        if not o.candidates:
            continue
        cell = cells[key]
        censored = cell["censored"].to_numpy(dtype=bool)
        base = cell["log_wage"].to_numpy(dtype=float)
        limit = float(cell["upper_limit"].iloc[0])
        lo_w, hi_w = params.window(limit)
        samples = {}
        for label in sorted(o.candidates, key=_label_rank):
            combined = base.copy()
            combined[censored] = o.candidates[label]
            samples[label] = combined
        span_lo = min(s.min() for s in samples.values())
        span_hi = max(s.max() for s in samples.values())
        bw_ref = params.bandwidth or silverman_bandwidth(next(iter(samples.values())))
        grid = uniform_grid(span_lo - 3 * bw_ref, span_hi + 3 * bw_ref, params.grid_step)
        frame = pd.DataFrame({"x": grid})
        for label, sample in samples.items():
            bw = params.bandwidth if params.bandwidth is not None else silverman_bandwidth(sample)
            frame[f"f_{label}"] = kde(sample, grid, bw).ordinates
        frame["censor_limit"] = limit
        frame["window_lo"] = lo_w
        frame["window_hi"] = hi_w
        out[key.label] = frame
    return out


def export_profiles(
    store: pd.DataFrame, config: PipelineConfig
) -> dict[str, pd.DataFrame]:
    """Per-cell coefficient profiles over the quantile grid (plus the
    extrapolated continuation) in CSV-ready form."""
    config.validate()
    covariates = list(config.covariates)
    cells = partition(store)
    summary = cell_summary(cells, config.min_uncensored, config.max_censor_share)
    looms, wages, _ = two_stage_looms(
        store, covariates, config.seed, cells=cells, strict=False
    )
    out: dict[str, pd.DataFrame] = {}
    for key in sorted(cells):
        cell = cells[key]
        mask = (
            (summary["year"] == key.year)
            & (summary["gender"] == key.gender)
            & (summary["age_group"] == key.age_group)
            & (summary["educ_group"] == key.educ_group)
            & (summary["region"] == key.region)
        )
        if not summary.loc[mask, "fittable"].iloc[0]:
            continue
        design = build_design(cell, covariates, extras=loom_design_columns(cell, looms, wages))
        spec = TobitSpec(
            design=design.values,
            upper_limit=cell["upper_limit"].to_numpy(dtype=float),
            column_names=design.column_names,
        )
        try:
            profile = coefficient_profile(
                spec,
                cell["log_wage"].to_numpy(dtype=float),
                cell["censored"].to_numpy(dtype=int),
                delta=config.cqr_delta,
                zeta_mult=config.cqr_zeta_mult,
            )
        except (CensImputeError, ValueError):
            continue
        frame = pd.DataFrame({"quantile": profile.grid, "feasible": profile.feasible})
        for j, name in enumerate(design.column_names):
            frame[name] = profile.coefficients[j]
        try:
            extrap = extrapolate_profile(
                profile,
                penalty=config.profile_penalty,
                min_quantile=config.profile_min_quantile,
                invert_weights=config.profile_invert_weights,
            )
            for j, name in enumerate(design.column_names):
                frame[f"{name}_extrapolated"] = extrap.coefficients[j]
        except (CensImputeError, ValueError):
            pass
        out[key.label] = frame
    return out


def _label_rank(label: str):
    from censimpute.selection import _method_rank

    return (_method_rank(label), label)
