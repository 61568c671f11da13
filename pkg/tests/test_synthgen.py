import numpy as np
import pytest
from scipy.special import ndtri

from censimpute.errors import ConfigError
from censimpute.panel import partition
from censimpute.synthgen import SynthConfig, generate, write_outputs


class TestGenerate:
    def test_seed_reproducibility(self):
        a = generate(SynthConfig(n_persons=500, seed=3))
        b = generate(SynthConfig(n_persons=500, seed=3))
        assert a.store.equals(b.store)
        assert a.truth.equals(b.truth)

    def test_target_share_hit(self):
        res = generate(SynthConfig(n_persons=6000, target_censor_share=0.12, seed=4))
        assert len(res.store) >= 10_000
        assert abs(res.realized_censor_share - 0.12) < 0.02

    def test_rules_cover_all_year_regions(self):
        res = generate(SynthConfig(n_persons=500, years=(2009, 2010, 2011), seed=5))
        pairs = set(zip(res.store["year"], res.store["region"]))
        rule_pairs = {(r.year, r.region) for r in res.rules}
        assert pairs <= rule_pairs

    def test_censored_rows_sit_at_limit(self):
        res = generate(SynthConfig(n_persons=2000, target_censor_share=0.3, seed=6))
        cens = res.store[res.store["censored"]]
        assert np.array_equal(cens["log_wage"].to_numpy(), cens["upper_limit"].to_numpy())
        unc = res.store[~res.store["censored"]]
        assert (unc["log_wage"] < unc["upper_limit"]).all()

    def test_truth_recoverable(self):
        res = generate(SynthConfig(n_persons=800, target_censor_share=0.3, seed=7))
        restored = res.store["log_wage"].where(~res.store["censored"], res.truth)
        assert np.array_equal(restored.to_numpy(), res.truth.to_numpy())

    def test_partitionable_into_declared_cells(self):
        cfg = SynthConfig(
            n_persons=3000, years=(2009, 2010), genders=("m", "f"),
            n_age_groups=3, n_edu_groups=1, seed=8,
        )
        res = generate(cfg)
        cells = partition(res.store)
        assert len(cells) == 12  # 2 years x 2 genders x 3 age groups

    def test_bad_config_raises(self):
        with pytest.raises(ConfigError):
            generate(SynthConfig(n_persons=0))
        with pytest.raises(ConfigError):
            generate(SynthConfig(target_censor_share=0.99))
        with pytest.raises(ConfigError):
            generate(SynthConfig(regime="weird"))

    def test_location_scale_positivity_guard(self):
        with pytest.raises(ConfigError):
            generate(SynthConfig(regime="location_scale", scale_gamma=(0.01, -0.3, 0.0), seed=9))


class TestQuantilePaths:
    def test_constant_regime_flat_slope_profile(self):
        # quantile-regression slopes on uncensored constant-regime data stay
        # flat across quantiles, within Monte Carlo bands
        from censimpute.estimators import quantreg

        taus = (0.25, 0.5, 0.75)
        diffs = []
        for rep in range(12):
            cfg = SynthConfig(
                n_persons=2500, years=(2010,), genders=("m",), n_age_groups=1,
                regime="constant", target_censor_share=0.0, seed=200 + rep,
                person_sd=0.0, estab_sd=0.0, occ_sd=0.0,
            )
            res = generate(cfg)
            x = np.column_stack(
                [np.ones(len(res.store)), res.store["age_c"], res.store["age_c2"], res.store["log_size"]]
            )
            slopes = [quantreg(x, res.truth.to_numpy(), t).coefficients[1] for t in taus]
            diffs.append(slopes[2] - slopes[0])
        diffs = np.array(diffs)
        mc_se = diffs.std(ddof=1) / np.sqrt(len(diffs))
        assert abs(diffs.mean()) <= 3 * mc_se + 1e-9

    def test_location_scale_regime_slope_drifts(self):
        from censimpute.estimators import quantreg

        gamma = (0.25, 0.12, 0.0)
        cfg = SynthConfig(
            n_persons=8000, years=(2010,), genders=("m",), n_age_groups=1,
            regime="location_scale", scale_gamma=gamma, target_censor_share=0.0,
            seed=300, person_sd=0.0, estab_sd=0.0, occ_sd=0.0,
        )
        res = generate(cfg)
        x = np.column_stack(
            [np.ones(len(res.store)), res.store["age_c"], res.store["age_c2"], res.store["log_size"]]
        )
        y = res.truth.to_numpy()
        s25 = quantreg(x, y, 0.25).coefficients[1]
        s75 = quantreg(x, y, 0.75).coefficients[1]
        expected = gamma[1] * (ndtri(0.75) - ndtri(0.25))
        assert abs((s75 - s25) - expected) < 0.4 * expected


def test_write_outputs_schema(tmp_path):
    res = generate(SynthConfig(n_persons=300, seed=10))
    write_outputs(res, tmp_path / "panel.csv", tmp_path / "truth.csv")
    import pandas as pd

    panel = pd.read_csv(tmp_path / "panel.csv")
    truth = pd.read_csv(tmp_path / "truth.csv")
    assert {"spell_id", "log_wage", "censored", "age_c", "log_size"} <= set(panel.columns)
    assert list(truth.columns) == ["spell_id", "true_log_wage"]
    assert len(panel) == len(truth) == len(res.store)
