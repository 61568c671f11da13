import numpy as np
import pandas as pd
import pytest

from censimpute.errors import DataError
from censimpute.panel import (
    CellKey,
    CensorRule,
    DesignMatrix,
    SpellRecord,
    build_design,
    cell_summary,
    censoring_share,
    frame_to_records,
    ingest,
    partition,
)

RULES = [CensorRule(year=2010, region="west", upper_limit=4.8)]


def write_csv(tmp_path, rows, name="panel.csv", header=None):
    header = header or (
        "spell_id,person_id,estab_id,occ_id,year,region,duration,log_wage,"
        "gender,age_group,educ_group"
    )
    path = tmp_path / name
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def base_row(spell="s1", wage=4.5, duration=100.0, censored=None):
    row = f"{spell},p1,e1,o1,2010,west,{duration},{wage},m,a1,e1"
    if censored is not None:
        row += f",{censored}"
    return row


class TestIngest:
    def test_flag_derived_at_limit(self, tmp_path):
        path = write_csv(tmp_path, [base_row(wage=4.8)])
        frame, report = ingest(path, RULES)
        assert frame["censored"].tolist() == [True]
        assert report.n_accepted == 1

    def test_flag_derived_below_limit(self, tmp_path):
        path = write_csv(tmp_path, [base_row(wage=4.3)])
        frame, _ = ingest(path, RULES)
        assert frame["censored"].tolist() == [False]

    def test_zero_duration_rejected(self, tmp_path):
        path = write_csv(tmp_path, [base_row(duration=0.0), base_row(spell="s2")])
        frame, report = ingest(path, RULES)
        assert len(frame) == 1
        assert report.rejected["nonpositive_duration"] == 1

    def test_uncensored_above_limit_rejected(self, tmp_path):
        header = (
            "spell_id,person_id,estab_id,occ_id,year,region,duration,log_wage,"
            "gender,age_group,educ_group,censored"
        )
        path = write_csv(
            tmp_path,
            [base_row(wage=4.9, censored="false"), base_row(spell="s2", censored="false")],
            header=header,
        )
        frame, report = ingest(path, RULES)
        assert len(frame) == 1
        assert report.rejected["uncensored_above_limit"] == 1

    def test_flag_reconciles_with_rule_for_all_accepted(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        for i, w in enumerate(rng.normal(4.4, 0.3, size=200)):
            w = min(w, 4.8)
            rows.append(f"s{i},p{i},e1,o1,2010,west,10,{w},m,a1,e1")
        frame, _ = ingest(write_csv(tmp_path, rows), RULES)
        at_limit = frame["log_wage"] >= 4.8
        assert (frame["censored"] == at_limit).all()

    def test_missing_column_raises(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("spell_id,year\ns1,2010\n")
        with pytest.raises(DataError):
            ingest(path, RULES)

    def test_missing_rule_raises(self, tmp_path):
        path = write_csv(tmp_path, [base_row()])
        with pytest.raises(DataError):
            ingest(path, [CensorRule(year=1999, region="west", upper_limit=4.8)])

    def test_schema_mapping(self, tmp_path):
        header = (
            "sid,person_id,estab_id,occ_id,year,region,duration,lnw,"
            "gender,age_group,educ_group"
        )
        path = write_csv(tmp_path, ["s9,p1,e1,o1,2010,west,50,4.2,m,a1,e1"], header=header)
        frame, _ = ingest(path, RULES, schema={"spell_id": "sid", "log_wage": "lnw"})
        assert frame["spell_id"].tolist() == ["s9"]
        assert frame["log_wage"].tolist() == [4.2]

    def test_raw_wage_scale(self, tmp_path):
        header = (
            "spell_id,person_id,estab_id,occ_id,year,region,duration,wage,"
            "gender,age_group,educ_group"
        )
        path = write_csv(tmp_path, ["s1,p1,e1,o1,2010,west,50,90.0,m,a1,e1"], header=header)
        frame, _ = ingest(path, RULES, wage_scale="raw")
        assert abs(frame["log_wage"].iloc[0] - np.log(90.0)) < 1e-12

    def test_deterministic(self, tmp_path):
        rows = [base_row(spell=f"s{i}", wage=4.0 + 0.001 * i) for i in range(50)]
        path = write_csv(tmp_path, rows)
        a, _ = ingest(path, RULES)
        b, _ = ingest(path, RULES)
        assert a.equals(b)


class TestPartition:
    def make_frame(self, years, genders, n_per=3):
        rows = []
        k = 0
        for y in years:
            for g in genders:
                for _ in range(n_per):
                    rows.append(
                        dict(
                            spell_id=f"s{k}", person_id=f"p{k}", estab_id="e1", occ_id="o1",
                            year=y, region="west", duration=10.0, log_wage=4.0,
                            gender=g, age_group="a1", educ_group="e1", censored=False,
                            upper_limit=4.8,
                        )
                    )
                    k += 1
        return pd.DataFrame(rows)

    def test_combinatorics(self):
        frame = self.make_frame([2009, 2010], ["m", "f"])
        cells = partition(frame)
        assert len(cells) == 4
        assert sum(len(c) for c in cells.values()) == len(frame)

    def test_single_cell(self):
        frame = self.make_frame([2010], ["m"])
        cells = partition(frame)
        assert len(cells) == 1
        key = next(iter(cells))
        assert key == CellKey(2010, "m", "a1", "e1", "west")

    def test_empty_input(self):
        assert partition(pd.DataFrame()) == {}

    def test_undeclared_level_raises(self):
        frame = self.make_frame([2010], ["m", "x"])
        with pytest.raises(DataError):
            partition(frame, levels={"gender": ["m", "f"]})

    def test_union_is_identity(self):
        frame = self.make_frame([2009, 2010], ["m", "f"])
        cells = partition(frame)
        rebuilt = pd.concat(cells.values()).sort_index()
        assert rebuilt.equals(frame)


class TestCensoringShare:
    def test_share(self):
        frame = pd.DataFrame({"censored": [True] * 3 + [False] * 7})
        assert censoring_share(frame) == 0.3

    def test_no_censored(self):
        frame = pd.DataFrame({"censored": [False] * 5})
        assert censoring_share(frame) == 0.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            censoring_share(pd.DataFrame({"censored": []}))

    def test_summary_flags_unfittable(self):
        rows = []
        for i in range(100):
            rows.append(
                dict(
                    spell_id=f"s{i}", person_id=f"p{i}", estab_id="e", occ_id="o",
                    year=2010, region="west", duration=1.0, log_wage=4.0,
                    gender="m", age_group="a", educ_group="e", censored=i < 97,
                    upper_limit=4.8,
                )
            )
        cells = partition(pd.DataFrame(rows))
        summary = cell_summary(cells, min_uncensored=200, max_censor_share=0.95)
        assert not summary["fittable"].iloc[0]


class TestDesignMatrix:
    def test_zero_column_rejected(self):
        with pytest.raises(ValueError):
            DesignMatrix(values=np.zeros((5, 1)), column_names=["x"], includes_intercept=False)

    def test_intercept_must_be_ones(self):
        with pytest.raises(ValueError):
            DesignMatrix(values=np.full((4, 1), 2.0), column_names=["intercept"])

    def test_build_drops_zero_and_constant_extras(self):
        frame = pd.DataFrame({"x": [1.0, 2.0, 3.0]})
        design = build_design(
            frame, ["x"], extras={"flag": np.zeros(3), "const": np.full(3, 7.0)}
        )
        assert design.column_names == ["intercept", "x"]
        assert set(design.dropped) == {"flag", "const"}


def test_spell_record_validation():
    with pytest.raises(ValueError):
        SpellRecord(
            spell_id="s", person_id="p", estab_id="e", occ_id="o", year=2010,
            region="w", duration=0.0, log_wage=4.0, censored=False,
        )


def test_frame_to_records_roundtrip_fields():
    frame = pd.DataFrame(
        [
            dict(
                spell_id="s1", person_id="p1", estab_id="e1", occ_id="o1",
                year=2010, region="west", duration=12.0, log_wage=4.4,
                censored=False, gender="m", age_group="a1", educ_group="e1", cov=1.5,
            )
        ]
    )
    rec = frame_to_records(frame, covariates=["cov"])[0]
    assert rec.spell_id == "s1" and rec.covariates.tolist() == [1.5]
