"""Synthetic longitudinal wage panels with known ground truth.

Three regimes. ``constant``: the censored-normal model is exactly right, so
Tobit-based imputation should win. ``location_scale``: coefficients drift
linearly in the normal quantile, b_j + gamma_j * Phi^-1(q), which is the
analytic oracle for the quantile-profile tests. ``lower_tail``: a
depressed-wage contamination below roughly the 20th quantile leaves the
upper conditional distribution normal but wrecks a full-sample normal fit;
this is the regime that renders the density distortion at the censoring
limit measurable at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from censimpute.errors import ConfigError
from censimpute.panel import CensorRule
from censimpute.rng import master_stream


@dataclass
class SynthConfig:
    n_persons: int = 2000
    years: tuple[int, ...] = (2009, 2010)
    n_estabs: int = 150
    n_occs: int = 20
    regions: tuple[str, ...] = ("west",)
    genders: tuple[str, ...] = ("m", "f")
    n_age_groups: int = 2
    n_edu_groups: int = 1
    employment_rate: float = 0.9
    extra_spell_rate: float = 0.15
    switch_rate: float = 0.2
    coef_intercept: float = 4.0
    coef_age: float = 0.25
    coef_age2: float = -0.03
    coef_size: float = 0.06
    person_sd: float = 0.25
    estab_sd: float = 0.12
    occ_sd: float = 0.08
    noise_sd: float = 0.35
    regime: str = "constant"
    scale_gamma: tuple[float, float, float] = (0.18, 0.12, 0.0)
    tail_prob: float = 0.25
    tail_shift: float = 1.0
    tail_sd: float = 0.6
    target_censor_share: float = 0.12
    seed: int = 12345

    def validate(self) -> None:
        if self.n_persons <= 0 or self.n_estabs <= 0 or self.n_occs <= 0 or not self.years:
            raise ConfigError("panel dimensions must be positive")
        if not 0.0 <= self.target_censor_share <= 0.95:
            raise ConfigError("target censoring share must lie in [0, 0.95]")
        if self.regime not in ("constant", "location_scale", "lower_tail"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.regime == "lower_tail" and not 0.0 < self.tail_prob < 0.5:
            raise ConfigError("tail_prob must lie in (0, 0.5)")
        if not 0.0 < self.employment_rate <= 1.0:
            raise ConfigError("employment rate must lie in (0, 1]")


@dataclass
class SynthResult:
    store: pd.DataFrame
    truth: pd.Series
    rules: list[CensorRule]
    config: SynthConfig = field(repr=False, default=None)

    @property
    def realized_censor_share(self) -> float:
        return float(self.store["censored"].mean())


COVARIATE_COLUMNS = ["age", "age_c", "age_c2", "log_size"]

_AGE_LO, _AGE_HI = 25.0, 61.0


def _age_group_label(age: np.ndarray, n_groups: int) -> np.ndarray:
    edges = np.linspace(_AGE_LO, _AGE_HI + 1e-9, n_groups + 1)
    idx = np.clip(np.digitize(age, edges) - 1, 0, n_groups - 1)
    labels = np.array([f"a{int(edges[k])}-{int(edges[k + 1])}" for k in range(n_groups)])
    return labels[idx]


def generate(config: SynthConfig) -> SynthResult:
    """Builds the panel, censors it at per-(year, region) empirical quantiles,
    and returns the censored store together with the true wages."""
    config.validate()
    rng = master_stream(config.seed)
    n_pers = config.n_persons
    years = list(config.years)

    gender = rng.choice(config.genders, size=n_pers)
    region = rng.choice(config.regions, size=n_pers)
    educ = rng.choice([f"e{k}" for k in range(config.n_edu_groups)], size=n_pers)
    base_age = rng.uniform(_AGE_LO, _AGE_HI - len(years), size=n_pers)
    person_eff = rng.normal(0.0, config.person_sd, size=n_pers)
    estab_eff = rng.normal(0.0, config.estab_sd, size=config.n_estabs)
    occ_eff = rng.normal(0.0, config.occ_sd, size=config.n_occs)
    estab_logsize = rng.normal(3.5, 0.8, size=config.n_estabs)

    cur_estab = rng.integers(0, config.n_estabs, size=n_pers)
    cur_occ = rng.integers(0, config.n_occs, size=n_pers)

    cols: dict[str, list] = {k: [] for k in (
        "person", "estab", "occ", "year", "duration", "age"
    )}
    for yi, year in enumerate(years):
        if yi > 0:
            switch = rng.random(n_pers) < config.switch_rate
            cur_estab[switch] = rng.integers(0, config.n_estabs, size=int(switch.sum()))
            switch_occ = rng.random(n_pers) < config.switch_rate / 2.0
            cur_occ[switch_occ] = rng.integers(0, config.n_occs, size=int(switch_occ.sum()))
        employed = rng.random(n_pers) < config.employment_rate
        split = employed & (rng.random(n_pers) < config.extra_spell_rate)
        ages = base_age + yi

        single = employed & ~split
        idx = np.flatnonzero(single)
        cols["person"].append(idx)
        cols["estab"].append(cur_estab[idx])
        cols["occ"].append(cur_occ[idx])
        cols["year"].append(np.full(idx.size, year))
        cols["duration"].append(rng.uniform(180.0, 365.0, size=idx.size))
        cols["age"].append(ages[idx])

        idx = np.flatnonzero(split)
        if idx.size:
            d1 = rng.uniform(60.0, 200.0, size=idx.size)
            other_estab = rng.integers(0, config.n_estabs, size=idx.size)
            for part, dur, estabs in ((0, d1, cur_estab[idx]), (1, 365.0 - d1, other_estab)):
                cols["person"].append(idx)
                cols["estab"].append(estabs)
                cols["occ"].append(cur_occ[idx])
                cols["year"].append(np.full(idx.size, year))
                cols["duration"].append(dur)
                cols["age"].append(ages[idx])
            cur_estab[idx] = other_estab

    person = np.concatenate(cols["person"])
    if person.size == 0:
        raise ConfigError("configuration produced an empty panel")
    estab = np.concatenate(cols["estab"])
    occ = np.concatenate(cols["occ"])
    year_arr = np.concatenate(cols["year"])
    duration = np.concatenate(cols["duration"])
    age = np.concatenate(cols["age"])

    age_c = (age - _AGE_LO) / 10.0
    log_size = estab_logsize[estab]
    mean = (
        config.coef_intercept
        + config.coef_age * age_c
        + config.coef_age2 * age_c**2
        + config.coef_size * log_size
        + person_eff[person]
        + estab_eff[estab]
        + occ_eff[occ]
    )
    if config.regime == "location_scale":
        g0, g_age, g_size = config.scale_gamma
        scale = g0 + g_age * age_c + g_size * log_size
        if np.any(scale <= 0):
            raise ConfigError("location-scale loadings produce nonpositive scale")
        noise = scale * rng.normal(size=person.size)
    elif config.regime == "lower_tail":
        # Contaminated lower tail: a depressed-wage component makes the
        # intercept's quantile path steep below its mass while leaving the
        # upper conditional distribution exactly normal.
        shock = rng.normal(size=person.size)
        in_tail = rng.random(person.size) < config.tail_prob
        noise = np.where(
            in_tail,
            -config.tail_shift + config.tail_sd * shock,
            config.noise_sd * shock,
        )
    else:
        noise = config.noise_sd * rng.normal(size=person.size)
    true_logw = mean + noise

    frame = pd.DataFrame(
        {
            "spell_id": [f"s{k:07d}" for k in range(person.size)],
            "person_id": [f"p{k:06d}" for k in person],
            "estab_id": [f"e{k:05d}" for k in estab],
            "occ_id": [f"o{k:03d}" for k in occ],
            "year": year_arr.astype(int),
            "region": pd.Series(region[person]).astype(str),
            "duration": duration,
            "log_wage": true_logw,
            "gender": pd.Series(gender[person]).astype(str),
            "age_group": _age_group_label(age, config.n_age_groups),
            "educ_group": pd.Series(educ[person]).astype(str),
            "age": age,
            "age_c": age_c,
            "age_c2": age_c**2,
            "log_size": log_size,
        }
    )

    rules: list[CensorRule] = []
    upper = np.empty(len(frame))
    for (yr, reg), sub in frame.groupby(["year", "region"], sort=True):
        if config.target_censor_share > 0:
            limit = float(np.quantile(sub["log_wage"], 1.0 - config.target_censor_share))
        else:
            limit = float(sub["log_wage"].max()) + 1.0
        rules.append(CensorRule(year=int(yr), region=str(reg), upper_limit=limit))
        upper[sub.index] = limit

    truth = frame["log_wage"].copy()
    frame["upper_limit"] = upper
    frame["censored"] = frame["log_wage"] >= frame["upper_limit"]
    frame.loc[frame["censored"], "log_wage"] = frame.loc[frame["censored"], "upper_limit"]

    return SynthResult(store=frame, truth=truth, rules=rules, config=config)


def write_outputs(result: SynthResult, panel_path, truth_path) -> None:
    """Canonical input CSV plus the ground-truth CSV (spell_id, true_log_wage)."""
    cols = [
        "spell_id", "person_id", "estab_id", "occ_id", "year", "region",
        "duration", "log_wage", "censored", "gender", "age_group", "educ_group",
    ] + COVARIATE_COLUMNS
    result.store[cols].to_csv(panel_path, index=False)
    pd.DataFrame(
        {"spell_id": result.store["spell_id"], "true_log_wage": result.truth}
    ).to_csv(truth_path, index=False)
