import json
import math

import numpy as np
import pytest

from confoundsim.cli import main
from confoundsim.glm import DesignMatrix, fit_logistic
from confoundsim.ingest import parse_mapping_file
from confoundsim.metamodel import ModelParams, draw_population

from conftest import DATA_DIR, dataset_from_2x2, log_odds_ratio


def run(argv):
    return main(argv)


class TestSimulate:
    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["simulate", "--p", "0.75", "--k", "4", "--n", "1000", "--seed", "7"]
        assert run(args + ["--out", str(a)]) == 0
        assert run(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_header_and_embedded_config(self, tmp_path):
        out = tmp_path / "pop.csv"
        run(["simulate", "--p", "0.75", "--k", "2", "--n", "10", "--seed", "3",
             "--out", str(out)])
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# confoundsim ")
        config = json.loads(lines[1].split("config: ", 1)[1])
        assert config["seed"] == 3 and config["p"] == 0.75
        assert lines[2] == "Q,R0,R1,R2"
        assert len(lines) == 13

    def test_out_of_range_p_exits_2(self, capsys):
        assert run(["simulate", "--p", "0.4", "--k", "2", "--n", "10",
                    "--seed", "1"]) == 2
        assert "error" in capsys.readouterr().err

    def test_seed_flag_is_mandatory(self):
        with pytest.raises(SystemExit) as exc:
            run(["simulate", "--p", "0.7", "--k", "2", "--n", "10"])
        assert exc.value.code == 2

    def test_causal_increment_lifts_dependent_mean(self, tmp_path):
        out = tmp_path / "pop.csv"
        n = 100_000
        run(["simulate", "--p", "0.7", "--k", "2", "--n", str(n),
             "--beta-prime", "0.1", "--seed", "5", "--out", str(out)])
        data = np.loadtxt(out, delimiter=",", skiprows=3)
        half_sd = 0.5 / math.sqrt(n)
        assert data[:, 1].mean() > 0.5 + 3 * half_sd       # dependent shifted
        assert abs(data[:, 2].mean() - 0.5) < 4 * half_sd  # predictor centered


class TestScan:
    def small_args(self, out, extra=()):
        return ["scan", "--r-list", "0.02,0.05", "--n-list", "1,2",
                "--N", "1200", "--reps", "8", "--seed", "99",
                "--out", str(out), *extra]

    def test_default_grid_shape(self, tmp_path):
        out = tmp_path / "grid.csv"
        assert run(["scan", "--N", "400", "--reps", "2", "--seed", "1",
                    "--out", str(out)]) == 0
        rows = [ln for ln in out.read_text().splitlines()
                if ln and not ln.startswith("#")]
        assert len(rows) == 1 + 20  # header + 5 correlations x 4 counts

    def test_thread_count_is_invisible_in_output(self, tmp_path):
        one, eight = tmp_path / "t1.csv", tmp_path / "t8.csv"
        assert run(self.small_args(one, ["--threads", "1"])) == 0
        assert run(self.small_args(eight, ["--threads", "8"])) == 0
        assert one.read_bytes() == eight.read_bytes()

    def test_rerun_from_embedded_config_reproduces_file(self, tmp_path):
        first, second = tmp_path / "one.csv", tmp_path / "two.csv"
        run(self.small_args(first))
        config = json.loads(
            first.read_text().splitlines()[1].split("config: ", 1)[1])
        argv = ["scan",
                "--r-list", ",".join(str(r) for r in config["r_list"]),
                "--n-list", ",".join(str(n) for n in config["n_list"]),
                "--N", str(config["N"]), "--reps", str(config["reps"]),
                "--beta-prime", str(config["beta_prime"]),
                "--rr-baseline", str(config["rr_baseline"]),
                "--seed", str(config["seed"]), "--out", str(second)]
        if config["ci_N"] is not None:
            argv += ["--ci-N", str(config["ci_N"])]
        assert run(argv) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_single_replication_keeps_mc_error_column(self, tmp_path):
        out = tmp_path / "tiny.csv"
        assert run(["scan", "--r-list", "0.05", "--n-list", "1", "--N", "500",
                    "--reps", "1", "--seed", "4", "--out", str(out)]) == 0
        header, row = [ln for ln in out.read_text().splitlines()
                       if not ln.startswith("#")]
        fields = dict(zip(header.split(","), row.split(",")))
        assert fields["mc_error_beta1"] == "inf"

    def test_json_and_csv_carry_identical_fields(self, tmp_path):
        csv_out, json_out = tmp_path / "g.csv", tmp_path / "g.json"
        run(self.small_args(csv_out))
        run(self.small_args(json_out, ["--format", "json"]))
        header = next(ln for ln in csv_out.read_text().splitlines()
                      if not ln.startswith("#"))
        payload = json.loads(json_out.read_text())
        assert list(payload["results"][0].keys()) == header.split(",")
        assert payload["metadata"]["config"]["seed"] == 99

    def test_causal_scan_runs(self, tmp_path):
        out = tmp_path / "c.csv"
        assert run(["scan", "--r-list", "0.05", "--n-list", "1", "--N", "800",
                    "--reps", "4", "--beta-prime", "0.1", "--seed", "2",
                    "--out", str(out)]) == 0
        assert "0.1" in json.loads(
            out.read_text().splitlines()[1].split("config: ", 1)[1]).__str__()


class TestFit:
    def _write_matrix(self, path, header, columns):
        rows = [",".join(header)]
        for row in np.column_stack(columns):
            rows.append(",".join(str(v) for v in row))
        path.write_text("\n".join(rows) + "\n")

    def test_intercept_only_recovers_logit_of_mean(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        y = np.concatenate([np.ones(25), np.zeros(75)]).astype(int)
        self._write_matrix(data, ["Y"], [y])
        out = tmp_path / "fit.json"
        assert run(["fit", str(data), "--dependent", "Y", "--out", str(out)]) == 0
        report = json.loads(out.read_text())["fit"]
        expected = math.log(0.25 / 0.75)
        assert report["terms"][0]["coefficient"] == pytest.approx(expected, abs=1e-8)

    def test_two_by_two_matches_contingency_oracle(self, tmp_path):
        data, out = tmp_path / "d.csv", tmp_path / "fit.json"
        a, b, c, d = 9, 4, 7, 12
        y, x = dataset_from_2x2(a, b, c, d)
        self._write_matrix(data, ["Y", "X"], [y.astype(int), x.astype(int)])
        assert run(["fit", str(data), "--dependent", "Y", "--regressors", "X",
                    "--out", str(out)]) == 0
        report = json.loads(out.read_text())["fit"]
        slope = next(t for t in report["terms"] if t["term"] == "X")
        assert slope["coefficient"] == pytest.approx(log_odds_ratio(a, b, c, d),
                                                     abs=1e-6)

    def test_simulated_population_matches_library_fit(self, tmp_path):
        pop_csv, out = tmp_path / "pop.csv", tmp_path / "fit.json"
        run(["simulate", "--p", "0.7", "--k", "2", "--n", "2000", "--seed", "11",
             "--out", str(pop_csv)])
        assert run(["fit", str(pop_csv), "--dependent", "R0",
                    "--regressors", "R1,R2", "--out", str(out)]) == 0
        report = json.loads(out.read_text())["fit"]

        m = draw_population(ModelParams(p=0.7, k=2, n_respondents=2000, seed=11), 3)
        resp = m.responses.astype(np.float64)
        direct = fit_logistic(resp[:, 0],
                              DesignMatrix.build([resp[:, 1], resp[:, 2]],
                                                 intercept=True))
        got = [t["coefficient"] for t in report["terms"]]
        assert np.allclose(got, direct.coefficients, atol=0, rtol=0)

    def test_singular_design_exits_3(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, 50)
        y = rng.integers(0, 2, 50)
        self._write_matrix(data, ["Y", "X", "X2"], [y, x, x])
        assert run(["fit", str(data), "--dependent", "Y",
                    "--regressors", "X,X2"]) == 3
        assert "rank deficient" in capsys.readouterr().err

    def test_separation_exits_0_with_flag(self, tmp_path, capsys):
        data, out = tmp_path / "d.csv", tmp_path / "fit.json"
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, 80)
        self._write_matrix(data, ["Y", "X"], [x, x])
        assert run(["fit", str(data), "--dependent", "Y", "--regressors", "X",
                    "--out", str(out)]) == 0
        report = json.loads(out.read_text())["fit"]
        assert report["separation_detected"] is True
        assert report["converged"] is False

    def test_unknown_column_exits_2(self, tmp_path):
        data = tmp_path / "d.csv"
        self._write_matrix(data, ["Y"], [np.array([0, 1, 0, 1])])
        assert run(["fit", str(data), "--dependent", "Z"]) == 2


def synthetic_nsduh(tmp_path, n=1500, seed=42):
    """Small survey fixture shaped like the real public-use file.

    Every one of the 79 recode-table columns is present with plausible raw
    codes so the full mapping table can be exercised end to end.
    """
    specs, _ = parse_mapping_file((DATA_DIR / "nsduh2023_mappings.txt").read_text())
    rng = np.random.default_rng(seed)

    drinker = rng.random(n)  # latent propensity shared by several columns
    columns = {}
    for spec in specs:
        pool = [0, 1, 2, 3]
        for rule in spec.rules:
            pool.extend([rule.low, min(rule.high, rule.low + 2)])
        columns[spec.name] = rng.choice(pool, size=n)
    columns["ALCYRTOT"] = np.where(rng.random(n) < 0.1, 991,
                                   (drinker * 365).astype(int))
    glue_yes = rng.random(n) < 0.05 + 0.1 * drinker
    columns["GLUE"] = np.where(glue_yes, 1, np.where(rng.random(n) < 0.05, 94, 2))
    columns["IRSEX"] = rng.integers(1, 3, n)
    columns["NEWRACE2"] = rng.integers(1, 8, n)
    columns["AGE3"] = rng.integers(1, 12, n)
    columns["BMI2"] = rng.integers(16, 40, n)
    columns["MJEVER"] = rng.integers(1, 3, n)
    columns["LSD"] = np.where(rng.random(n) < 0.08, 1, 2)
    columns["CIGEVER"] = rng.integers(1, 3, n)

    names = [spec.name for spec in specs]
    data_file = tmp_path / "survey.tsv"
    lines = ["\t".join(names)]
    table = np.column_stack([columns[name] for name in names])
    for row in table:
        lines.append("\t".join(str(int(v)) for v in row))
    data_file.write_text("\n".join(lines) + "\n")

    study_file = tmp_path / "study.json"
    study_file.write_text(json.dumps({
        "dependent": "GLUE",
        "independent": "ALCYRTOT",
        "unit_change": 52.18,
        "stages": {
            "A": ["IRSEX", "NEWRACE2", "AGE3", "BMI2"],
            "B": ["MJEVER"],
            "C": ["LSD"],
            "D": ["CIGEVER"],
        },
    }))
    return data_file, study_file


class TestIngest:
    def test_staged_pipeline_end_to_end(self, tmp_path, capsys):
        data_file, study_file = synthetic_nsduh(tmp_path)
        out = tmp_path / "stages.csv"
        code = run(["ingest", "--data", str(data_file),
                    "--mappings", str(DATA_DIR / "nsduh2023_mappings.txt"),
                    "--study", str(study_file), "--out", str(out)])
        assert code == 0
        lines = [ln for ln in out.read_text().splitlines()
                 if ln and not ln.startswith("#")]
        header = lines[0].split(",")
        assert header[:2] == ["stage", "r"]
        assert "relative_risk" in header and "baseline_prevalence" in header
        rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
        assert [row["stage"] for row in rows] == ["A", "B", "C", "D"]
        assert [int(row["n_confounders"]) for row in rows] == [4, 5, 6, 7]
        for row in rows:
            assert row["error"] == ""
            assert float(row["relative_risk"]) == float(row["relative_risk"])

    def test_json_format(self, tmp_path):
        data_file, study_file = synthetic_nsduh(tmp_path)
        out = tmp_path / "stages.json"
        assert run(["ingest", "--data", str(data_file),
                    "--mappings", str(DATA_DIR / "nsduh2023_mappings.txt"),
                    "--study", str(study_file), "--format", "json",
                    "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert len(payload["results"]) == 4
        assert payload["metadata"]["config"]["unit_change"] == 52.18

    def test_missing_mapping_file_exits_2(self, tmp_path, capsys):
        data_file, study_file = synthetic_nsduh(tmp_path, n=50)
        assert run(["ingest", "--data", str(data_file),
                    "--mappings", str(tmp_path / "nope.txt"),
                    "--study", str(study_file)]) == 2
        assert "cannot read" in capsys.readouterr().err

    def test_malformed_mapping_line_exits_2(self, tmp_path, capsys):
        data_file, study_file = synthetic_nsduh(tmp_path, n=50)
        bad = tmp_path / "bad.txt"
        bad.write_text("GLUE ORD 5:x\n")
        assert run(["ingest", "--data", str(data_file), "--mappings", str(bad),
                    "--study", str(study_file)]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_every_stage_failing_exits_3(self, tmp_path, capsys):
        data = tmp_path / "d.tsv"
        data.write_text("Y\tX\tDEAD\n" + "".join(
            f"{i % 2}\t{i % 5}\t0\n" for i in range(60)))
        maps = tmp_path / "m.txt"
        maps.write_text("Y ORD\n")
        study = tmp_path / "s.json"
        study.write_text(json.dumps({"dependent": "Y", "independent": "X",
                                     "stages": {"A": ["DEAD"]}}))
        assert run(["ingest", "--data", str(data), "--mappings", str(maps),
                    "--study", str(study)]) == 3
        assert "stage A" in capsys.readouterr().err


class TestExitCodes:
    def test_unwritable_output_exits_1(self, tmp_path, capsys):
        assert run(["simulate", "--p", "0.7", "--k", "1", "--n", "5",
                    "--seed", "1",
                    "--out", str(tmp_path / "no_dir" / "x.csv")]) == 1
        assert "error" in capsys.readouterr().err
