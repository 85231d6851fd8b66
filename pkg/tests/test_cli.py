import json
import logging
import os

import numpy as np
import pytest

import sdrme.bench as bench
from sdrme import __version__
from sdrme.cli import EXIT_CONFIG, EXIT_FAILED_TRIALS, EXIT_NOT_CERTIFIED, EXIT_OK, load_data, main
from sdrme.errors import ConfigError

from conftest import LOG2

MANIFEST_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "manifests")

TINY = {
    "name": "tiny",
    "model": "poisson",
    "theta_star": [LOG2],
    "sample_sizes": [40],
    "replications": 2,
    "seed": 5,
    "estimators": ["s-kl", "mle"],
}


@pytest.fixture(autouse=True)
def restore_logging(monkeypatch, tmp_path):
    """main() reconfigures the root logger; put it back after each test"""
    monkeypatch.setenv("SDRME_OUTPUT_DIR", str(tmp_path / "results"))
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def tiny_manifest(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.mark.parametrize("generator, code, text", [
    ("kl", EXIT_OK, "kl: Convex"),
    ("js", EXIT_OK, "js: Convex"),
    ("chi", EXIT_NOT_CERTIFIED, "chi: NotCertified"),
])
def test_certify(capsys, generator, code, text):
    assert main(["certify", generator]) == code
    assert text in capsys.readouterr().out


def test_certify_unknown_generator(capsys):
    assert main(["certify", "tsallis"]) == EXIT_CONFIG
    assert "unknown generator" in capsys.readouterr().err


def test_fit_counts(tmp_path, counts_csv, capsys):
    output = tmp_path / "fit.json"
    assert main(["fit", counts_csv, "--model", "poisson", "--estimator", "s-kl", "--output", str(output)]) == EXIT_OK
    assert "theta_hat" in capsys.readouterr().out
    payload = json.loads(output.read_text())
    assert payload["n"] == 50
    assert payload["se_kind"] == "efficient"
    assert len(payload["standard_errors"]) == 1
    assert payload["theta_hat"][0] == pytest.approx(np.log(2.06), abs=0.05)
    assert payload["config"]["job"]["model_params"]["x_max"] >= 60
    assert payload["version"] == __version__


def test_fit_ns_gamma_with_sandwich(tmp_path, counts_csv):
    output = tmp_path / "gamma.json"
    argv = ["fit", counts_csv, "--model", "poisson", "--estimator", "ns-gamma", "--alpha", "0.01", "--beta", "-1",
            "--gamma", "1.01", "--se", "sandwich", "--output", str(output)]
    assert main(argv) == EXIT_OK
    payload = json.loads(output.read_text())
    assert payload["estimator"] == "ns-gamma"
    assert payload["extra"]["gamma_config"]["delta"] == pytest.approx(0.0, abs=1e-15)
    assert payload["standard_errors"][0] > 0


def test_fit_default_output_location(tmp_path, counts_csv):
    assert main(["fit", counts_csv, "--model", "poisson", "--se", "none"]) == EXIT_OK
    payload = json.loads((tmp_path / "results" / "fit_poisson_s-kl.json").read_text())
    assert payload["standard_errors"] is None


def test_fit_rejects_alpha_equal_beta(counts_csv, capsys):
    argv = ["fit", counts_csv, "--model", "poisson", "--estimator", "ns-gamma", "--alpha", "1", "--beta", "1"]
    assert main(argv) == EXIT_CONFIG
    assert "estimator.alpha" in capsys.readouterr().err


def test_fit_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["fit", str(empty), "--model", "poisson"]) == EXIT_CONFIG
    assert "n >= 1 required" in capsys.readouterr().err


def test_fit_wrong_dimension(counts_csv):
    argv = ["fit", counts_csv, "--model", "rbm", "--model-param", "d_v=3", "--model-param", "d_h=1"]
    assert main(argv) == EXIT_CONFIG


def test_load_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1\nx\n3\n")
    with pytest.raises(ConfigError):
        load_data(str(bad))
    with pytest.raises(ConfigError, match="not found"):
        load_data(str(tmp_path / "missing.csv"))
    two_cols = tmp_path / "two.csv"
    two_cols.write_text("1,0\n0,1\n")
    assert load_data(str(two_cols), point_dim=2).shape == (2, 2)
    with pytest.raises(ConfigError):
        load_data(str(two_cols), point_dim=1)


def test_run_manifest_with_overrides(tmp_path, tiny_manifest, capsys):
    out = tmp_path / "out"
    argv = ["run", "--manifest", tiny_manifest, "--set", "n=60", "--set", "reps=3", "--jobs", "1",
            "--output-dir", str(out), "--no-progress"]
    assert main(argv) == EXIT_OK
    assert "s-kl" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["experiment"]["sample_sizes"] == [60]
    assert summary["experiment"]["replications"] == 3
    assert summary["failed_trials"] == 0


def test_run_is_reproducible(tmp_path, tiny_manifest):
    for name in ("a", "b"):
        argv = ["run", "--manifest", tiny_manifest, "--jobs", "1", "--output-dir", str(tmp_path / name),
                "--no-progress"]
        assert main(argv) == EXIT_OK
    assert (tmp_path / "a" / "trials.csv").read_bytes() == (tmp_path / "b" / "trials.csv").read_bytes()


def test_run_default_output_dir(tmp_path, tiny_manifest):
    assert main(["run", "--manifest", tiny_manifest, "--jobs", "1", "--no-progress"]) == EXIT_OK
    assert (tmp_path / "results" / "tiny" / "trials.csv").exists()


def test_run_reports_failed_trials(tmp_path, tiny_manifest, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("optimizer exploded")

    monkeypatch.setattr(bench, "fit_estimator", broken)
    argv = ["run", "--manifest", tiny_manifest, "--jobs", "1", "--output-dir", str(tmp_path / "out"),
            "--no-progress"]
    assert main(argv) == EXIT_FAILED_TRIALS


def test_run_fit_manifest(tmp_path):
    output = tmp_path / "fit.json"
    argv = ["run", "--manifest", os.path.join(MANIFEST_DIR, "poisson_fit.json"), "--set", f"fit.output={output}"]
    assert main(argv) == EXIT_OK
    payload = json.loads(output.read_text())
    assert payload["se_kind"] == "sandwich"


def test_run_bad_manifests(tmp_path, tiny_manifest, capsys):
    assert main(["run", "--manifest", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["run", "--manifest", tiny_manifest, "--set", "replications=1"]) == EXIT_CONFIG
    assert "replications" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out
