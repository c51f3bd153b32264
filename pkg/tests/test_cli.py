import json

import pandas as pd
import pytest

from heisenberg import __version__, config, records
from heisenberg.bubble import BubbleSpec, make_spec
from heisenberg.cli import RunConfig, main, resolve_config
from heisenberg.errors import ConfigError
from heisenberg.varsolve import DiscreteDomain, DiscreteField, SolverConfig

SMALL = ["--n", "300"]
GRID = ["--eps-grid", "0.25", "0.18", "0.125", "0.09"]


def write_config(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    @pytest.mark.parametrize("changes", [
        {"s": 1.5}, {"N": 0}, {"n": 10}, {"samples": 10}, {"lam": -1.0},
        {"eps_grid": [0.5, 0.4]}, {"only": ["L9"]}, {"sigma_mode": "wide"},
        {"tol": 0.0}, {"bubble": "missing.json"}, {"s": "abc"}, {"max_iter": 0},
        {"solver": "missing.json"},
    ])
    def test_invalid_values(self, changes):
        with pytest.raises(ConfigError):
            RunConfig(**changes).validate()

    def test_hash_excludes_output_directory(self):
        assert RunConfig(out="a").config_hash() == RunConfig(out="b").config_hash()
        assert RunConfig(seed=1).config_hash() != RunConfig(seed=2).config_hash()
        assert len(RunConfig().config_hash()) == 16

    def test_flags_override_file(self, tmp_path):
        path = write_config(tmp_path / "run.json", {"seed": 3, "lambda": 2.0, "n": 400})
        cfg = resolve_config(["eigen", "--config", path, "--seed", "5"])
        assert cfg.seed == 5
        assert cfg.lam == 2.0
        assert cfg.n == 400
        assert cfg.command == "eigen"

    def test_unknown_file_key(self, tmp_path):
        path = write_config(tmp_path / "run.json", {"colour": "blue"})
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)


class TestConfigErrors:
    def test_exit_code_and_nothing_written(self, tmp_path):
        out = tmp_path / "run"
        assert main(["constants", "--s", "1.5", "--out", str(out)]) == config.EXIT_CONFIG
        assert not out.exists()

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json", encoding="utf-8")
        assert main(["eigen", "--config", str(path), "--out", str(tmp_path / "run")]) == config.EXIT_CONFIG

    def test_mismatched_bubble_spec(self, tmp_path):
        bubble = tmp_path / "bubble.json"
        make_spec(1, 0.5).save(bubble)
        argv = ["lemmas", "--only", "L3", "--bubble", str(bubble), "--out", str(tmp_path / "run")] + GRID
        assert main(argv) == config.EXIT_CONFIG


class TestEigen:
    def test_writes_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert main(["eigen", "--out", str(out)] + SMALL) == config.EXIT_OK
        doc = records.read_json(out / "eigen.json")
        assert doc["lambda1"] > 0
        assert doc["residual"] <= config.EIGEN_TOL
        assert doc["seed"] == 0 and len(doc["config_hash"]) == 16
        field = DiscreteField.load(out / "eigenvector.bin")
        domain = DiscreteDomain.load(out / "domain.bin")
        assert field.values.size == domain.n == doc["n"]
        header, _ = records.read_container(out / "domain.bin")
        assert header["config_hash"] == doc["config_hash"]
        assert header["seed"] == 0 and header["version"] == __version__
        assert records.read_json(out / "solver.json")["config_hash"] == doc["config_hash"]

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["eigen", "--out", str(a)] + SMALL) == config.EXIT_OK
        assert main(["eigen", "--out", str(b)] + SMALL) == config.EXIT_OK
        for name in ("eigen.json", "eigenvector.bin", "domain.bin", "solver.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_refinement_table(self, tmp_path):
        out = tmp_path / "run"
        assert main(["eigen", "--out", str(out), "--refine", "400"] + SMALL) == config.EXIT_OK
        table = pd.read_csv(out / "refinement.csv")
        assert list(table["requested"]) == [300, 400]
        assert "delta" in table.columns
        assert len(records.read_json(out / "eigen.json")["refinement"]["deltas"]) == 1


class TestSolve:
    def test_lambda_above_first_eigenvalue(self, tmp_path):
        out = tmp_path / "run"
        assert main(["solve", "--lambda", "1e9", "--out", str(out)] + SMALL) == config.EXIT_HYPOTHESIS
        assert not (out / "solution.bin").exists()

    def test_default_lambda(self, tmp_path):
        out = tmp_path / "run"
        assert main(["solve", "--out", str(out)] + SMALL) == config.EXIT_OK
        doc = records.read_json(out / "solve.json")
        assert doc["lambda"] == pytest.approx(0.5 * doc["lambda1"])
        assert doc["positive"]
        assert doc["residual"] <= 1e-6
        assert doc["strict_drop"]
        assert doc["level_matches"] and doc["level_below_sobolev"]
        assert DiscreteField.load(out / "solution.bin").values.size == doc["n"]


class TestLemmas:
    def test_single_check_from_saved_bubble(self, tmp_path):
        bubble = tmp_path / "bubble.json"
        make_spec(1, 0.25).save(bubble)
        out = tmp_path / "run"
        argv = ["lemmas", "--only", "L3", "--bubble", str(bubble), "--samples", "2000",
                "--out", str(out)] + GRID
        assert main(argv) in (config.EXIT_OK, config.EXIT_INCONCLUSIVE)
        doc = records.read_json(out / "verdicts.json")
        assert [v["lemma"] for v in doc["verdicts"]] == ["L3"]
        assert doc["lambda"] == 0.0
        frame = pd.read_csv(out / "sweep_sup-bound.csv")
        assert list(frame["eps"]) == [0.25, 0.18, 0.125, 0.09]
        raw = (out / "sweep_sup-bound.csv").read_bytes()
        assert b"\r\n" in raw
        assert b"sup-bound,0.18," in raw

    def test_csv_floats_round_trip(self, tmp_path):
        frame = pd.DataFrame({"eps": [0.5, 0.35, 0.18, 0.09],
                              "value": [0.1 + 0.2, 1e-300, 2.0 / 3.0, -7.25]})
        records.write_csv(frame, tmp_path / "table.csv")
        assert pd.read_csv(tmp_path / "table.csv")["eps"].tolist() == [0.5, 0.35, 0.18, 0.09]
        back = pd.read_csv(tmp_path / "table.csv", float_precision="round_trip")
        assert back["value"].tolist() == frame["value"].tolist()
        assert "0.17999999999999999" not in (tmp_path / "table.csv").read_text(encoding="utf-8")


class TestConstants:
    def test_deterministic_and_loadable(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        argv = ["constants", "--samples", "2000"]
        assert main(argv + ["--out", str(a)]) == config.EXIT_OK
        assert main(argv + ["--out", str(b)]) == config.EXIT_OK
        assert (a / "constants.json").read_bytes() == (b / "constants.json").read_bytes()
        spec = BubbleSpec.load(a / "bubble_spec.json")
        assert spec.kappa > 0
        assert spec.sigma == config.SWEEP_SIGMA
        assert spec.provenance["sigma"]["mode"] == "sweep"

    def test_unit_mode(self, tmp_path):
        out = tmp_path / "run"
        argv = ["constants", "--samples", "2000", "--sigma-mode", "unit", "--out", str(out)]
        assert main(argv) == config.EXIT_OK
        assert BubbleSpec.load(out / "bubble_spec.json").sigma == 1.0

    def test_doubling_samples_shrinks_stderr(self, tmp_path):
        docs = []
        for samples in (20_000, 40_000):
            out = tmp_path / str(samples)
            assert main(["constants", "--samples", str(samples), "--out", str(out)]) == config.EXIT_OK
            docs.append(records.read_json(out / "constants.json"))
        # expect 1 / sqrt(2)
        ratio = docs[1]["kappa_stderr"] / docs[0]["kappa_stderr"]
        assert 0.5 <= ratio <= 0.9


class TestSolverSettings:
    def test_file_sets_eigen_tolerance(self, tmp_path):
        solver = tmp_path / "solver.json"
        SolverConfig(tol=1e-7, max_iter=3000).save(solver)
        out = tmp_path / "run"
        assert main(["eigen", "--solver", str(solver), "--out", str(out)] + SMALL) == config.EXIT_OK
        doc = records.read_json(out / "eigen.json")
        assert doc["tol"] == 1e-7 and doc["max_iter"] == 3000
        assert doc["residual"] <= 1e-7
        written = records.read_json(out / "solver.json")
        assert written["tol"] == 1e-7 and written["config_hash"] == doc["config_hash"]

    def test_flags_override_file(self, tmp_path):
        solver = tmp_path / "solver.json"
        SolverConfig(tol=1e-9, max_iter=3000).save(solver)
        cfg = resolve_config(["solve", "--solver", str(solver), "--max-iter", "7"])
        built = cfg.solver_config(SolverConfig())
        assert (built.tol, built.max_iter) == (1e-9, 7)

    def test_defaults_without_file(self):
        built = RunConfig(tol=1e-5).solver_config(SolverConfig(tol=1e-8, max_iter=2000))
        assert (built.tol, built.max_iter) == (1e-5, 2000)

    def test_malformed_file(self, tmp_path):
        solver = tmp_path / "solver.json"
        solver.write_text('{"tol": -1}', encoding="utf-8")
        argv = ["eigen", "--solver", str(solver), "--out", str(tmp_path / "run")] + SMALL
        assert main(argv) == config.EXIT_CONFIG

    def test_iteration_cap_reports_nonconvergence(self, tmp_path):
        out = tmp_path / "run"
        assert main(["eigen", "--max-iter", "1", "--out", str(out)] + SMALL) == config.EXIT_NONCONVERGENCE
        assert DiscreteField.load(out / "eigenvector_best.bin").values.size > 0
