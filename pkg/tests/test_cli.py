from dataclasses import replace
from pathlib import Path
import json
import logging

import pandas as pd
import pytest

from src import main as cli
from src.evaluation import experiment
from src.utils import io_utils

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

EXTERIOR = """
[experiment]
name = "exterior"
problem = "exterior-ball"

[run]
iterations = {iterations}
k_bar = 1.0
w = 8.0
c = 1.0
mu = 2.0
deterministic = true
{extra}
"""

QUADRATIC = """
[experiment]
name = "quad"
problem = "synthetic-quadratic"

[problem]
dimension = 3
sigma = 0.5

[run]
iterations = 15
k_bar = 1.0
w = 8.0
c = 1.0
mu = 2.0
seed = 4
mc_samples = 4
"""


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch, caplog):
    # basicConfig(force=True) would detach caplog's handler
    monkeypatch.setattr(cli, "setup_logging", lambda verbose=False: None)
    caplog.set_level(logging.INFO)


def _exterior(write_config, iterations=20, extra=""):
    return write_config(EXTERIOR.format(iterations=iterations, extra=extra))


class TestRun:

    def test_success(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(_exterior(write_config)), "--out", str(out)]) == 0
        for name in ("trace.csv", "summary.json", "schema.json", "plot_objective.csv"):
            assert (out / name).exists()
        trace = pd.read_csv(out / "trace.csv")
        assert list(trace.columns) == ["t", "eta", "beta", "delta_norm", "feasibility", "dual_norm_l1",
                                       "objective_est", "tracking_err_or_blank"]
        assert len(trace) == 20

    def test_single_iteration(self, write_config, tmp_path):
        assert cli.main(["run", "--config", str(_exterior(write_config, iterations=1)), "--out", str(tmp_path)]) == 0
        assert len(pd.read_csv(tmp_path / "trace.csv")) == 1

    def test_same_seed_same_bytes(self, write_config, tmp_path):
        path = write_config(QUADRATIC)
        for name in ("a", "b"):
            assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

    def test_seed_override(self, write_config, tmp_path):
        path = write_config(QUADRATIC)
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path), "--seed-override", "7"]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["seed"] == 7

    def test_missing_config(self, tmp_path, caplog):
        assert cli.main(["run", "--config", str(tmp_path / "absent.toml")]) == 2
        assert "not found" in caplog.text

    def test_invalid_field(self, write_config, tmp_path):
        path = write_config(QUADRATIC.replace("k_bar = 1.0", "k_bar = -1.0"))
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_malformed_toml(self, write_config, tmp_path, caplog):
        path = write_config("[run\niterations = 3\n")
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
        assert "TOML" in caplog.text

    def test_infeasible_initial_point(self, write_config, tmp_path):
        path = _exterior(write_config, extra="initial_point = [0.0, 0.0]")
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 1
        assert (tmp_path / io_utils.FAILED_MARKER).exists()


class TestValidate:

    def test_shipped_exterior_config_passes(self, tmp_path):
        code = cli.main(["validate", "--config", str(CONFIGS / "exterior_ball.toml"), "--out", str(tmp_path)])
        assert code == 0
        reports = json.loads((tmp_path / "validation.json").read_text())
        assert {r["subject"] for r in reports} >= {"slater margin", "schedule parameters"}

    def test_nothing_to_validate(self, write_config, caplog):
        path = _exterior(write_config, extra="\n[validate]\nvalidators = []\n")
        assert cli.main(["validate", "--config", str(path)]) == 0
        assert "nothing validated" in caplog.text

    def test_shifted_surrogate_is_caught(self, write_config, monkeypatch, caplog):
        path = _exterior(write_config, extra='\n[validate]\nvalidators = ["majorization"]\nsamples = 200\nanchors = 1\n')
        real_build = experiment.build_problem

        def build_with_defect(config):
            bundle = real_build(config)
            block = bundle.problem.nonconvex[0]

            def shifted(anchor):
                good = block.surrogate(anchor)
                return replace(good, value=lambda x: good.value(x) - 0.1)

            problem = replace(bundle.problem, nonconvex=(replace(block, surrogate=shifted),))
            return experiment.ProblemBundle(problem=problem, kind=bundle.kind)

        monkeypatch.setattr(experiment, "build_problem", build_with_defect)
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "FAIL majorization: exterior@anchor0" in caplog.text


class TestSweep:

    def test_aggregate_files(self, write_config, tmp_path):
        path = write_config(QUADRATIC + '\n[sweep]\nseeds = [0, 1, 2]\niterations = [5, 10]\nmethods = ["costa"]\n')
        assert cli.main(["sweep", "--config", str(path), "--out", str(tmp_path), "--workers", "1"]) == 0
        assert len(pd.read_csv(tmp_path / "aggregate.csv")) == 6
        summary = json.loads((tmp_path / "sweep_summary.json").read_text())
        assert summary["cells"] == 6
        assert "costa" in summary["slopes"]


class TestFetch:

    def test_unknown_dataset_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            cli.main(["fetch", "--dataset", "iris"])

    def test_cached_dataset(self, tmp_path):
        (tmp_path / "gisette_scale").write_text("1 1:1.0\n")
        assert cli.main(["fetch", "--dataset", "gisette", "--out", str(tmp_path)]) == 0
