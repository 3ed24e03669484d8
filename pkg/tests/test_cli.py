"""End-to-end tests of the command-line interface."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from countsmooth.cli import main

REPO_ROOT = Path(__file__).resolve().parent.parent
SAMPLE_CORPUS = REPO_ROOT / "data" / "sample_corpus.txt"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture()
def binary_counts_file(tmp_path):
    path = tmp_path / "counts.txt"
    path.write_text("".join(f"{v}\n" for v in [0, 1, 0, 1, 1, 0, 0, 0, 0, 1]))
    return path


class TestFit:
    def test_binary_counts_single_atom_prior(self, tmp_path, binary_counts_file):
        prior_path = tmp_path / "prior.json"
        report_path = tmp_path / "report.json"
        code = main([
            "fit", str(binary_counts_file),
            "--output", str(prior_path), "--report", str(report_path),
        ])
        assert code == 0
        payload = json.loads(prior_path.read_text())
        assert payload["n_scale"] == 4.0
        assert len(payload["atoms"]) == 1
        assert payload["atoms"][0] == pytest.approx(0.4, abs=1e-9)
        report = json.loads(report_path.read_text())
        assert report["converged"] is True

    def test_one_heavy_two_atom_prior(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("".join(f"{v}\n" for v in [0] * 11 + [4]))
        prior_path = tmp_path / "prior.json"
        code = main(["fit", str(counts_path), "--output", str(prior_path),
                     "--grid-multiplier", "200"])
        assert code == 0
        payload = json.loads(prior_path.read_text())
        assert len(payload["atoms"]) == 2
        assert payload["atoms"][0] == pytest.approx(0.0, abs=1e-9)

    def test_strict_non_convergence_exit_code(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        rng = np.random.default_rng(3)
        counts_path.write_text("".join(f"{v}\n" for v in rng.poisson(8.0, size=200)))
        prior_path = tmp_path / "prior.json"
        # one Frank-Wolfe iteration cannot certify a multi-atom problem
        code = main(["fit", str(counts_path), "--output", str(prior_path),
                     "--max-fw-iters", "1", "--strict"])
        assert code == 2
        assert prior_path.exists()

    def test_empty_file_usage_error(self, tmp_path):
        empty = tmp_path / "empty.txt"
        empty.write_text("")
        assert main(["fit", str(empty)]) == 4

    def test_missing_file_usage_error(self):
        assert main(["fit", "/nonexistent/counts.txt"]) == 4


class TestEstimate:
    def test_empirical_probabilities(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("3\n1\n0\n")
        out = tmp_path / "probs.csv"
        code = main(["estimate", str(counts_path), "--estimator", "empirical",
                     "--output", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert [float(r["prob"]) for r in rows] == [0.75, 0.25, 0.0]
        assert [r["count"] for r in rows] == ["3", "1", "0"]

    def test_gt_pathology_exit_code(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("0\n0\n0\n4\n")
        out = tmp_path / "probs.csv"
        code = main(["estimate", str(counts_path), "--estimator", "gt",
                     "--output", str(out)])
        assert code == 3

    def test_normalized_output_sums_to_one(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("".join(f"{v}\n" for v in [5, 3, 0, 1, 0, 2]))
        out = tmp_path / "probs.csv"
        assert main(["estimate", str(counts_path), "--estimator", "npmle",
                     "--output", str(out)]) == 0
        total = sum(float(r["prob"]) for r in read_csv(out))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_pretrained_identity_matches_npmle(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("".join(f"{v}\n" for v in [0, 2, 1, 0, 3, 1, 0, 0]))
        prior_path = tmp_path / "prior.json"
        assert main(["fit", str(counts_path), "--output", str(prior_path)]) == 0
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert main(["estimate", str(counts_path), "--estimator", "npmle",
                     "--output", str(a)]) == 0
        assert main(["estimate", str(counts_path), "--estimator", "pretrained",
                     "--prior", str(prior_path), "--output", str(b)]) == 0
        pa = [float(r["prob"]) for r in read_csv(a)]
        pb = [float(r["prob"]) for r in read_csv(b)]
        np.testing.assert_allclose(pb, pa, rtol=1e-9)

    def test_unknown_estimator_usage_error(self, tmp_path):
        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("1\n2\n")
        assert main(["estimate", str(counts_path), "--estimator", "bogus"]) == 4


class TestBenchmark:
    def write_config(self, tmp_path, **overrides):
        base = {
            "distribution": "uniform", "k": 30, "n_grid": [30, 90],
            "trials": 4, "estimators": ["empirical", "laplace", "separable-oracle"],
            "seed": 17,
        }
        base.update(overrides)
        lines = []
        for key, value in base.items():
            if isinstance(value, list):
                lines.append(f"{key}: {value!r}")
            else:
                lines.append(f"{key}: {value!r}" if isinstance(value, str) else f"{key}: {value}")
        path = tmp_path / "config.yaml"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_smoke_emits_both_csvs(self, tmp_path):
        cfg = self.write_config(tmp_path)
        prefix = tmp_path / "bench"
        code = main(["benchmark", str(cfg), "--output", str(prefix)])
        assert code == 0
        trials = read_csv(f"{prefix}_trials.csv")
        agg = read_csv(f"{prefix}_aggregate.csv")
        assert len(trials) == 2 * 4 * 3
        assert len(agg) == 2 * 3
        oracle = [r for r in agg if r["estimator"] == "separable-oracle"]
        assert all(float(r["mean_regret"]) == 0.0 for r in oracle)

    def test_seed_repeat_byte_identical_aggregates(self, tmp_path):
        cfg = self.write_config(tmp_path)
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["benchmark", str(cfg), "--output", str(a)]) == 0
        assert main(["benchmark", str(cfg), "--output", str(b)]) == 0
        assert Path(f"{a}_aggregate.csv").read_bytes() == Path(f"{b}_aggregate.csv").read_bytes()

    def test_thread_count_does_not_change_aggregates(self, tmp_path):
        cfg = self.write_config(tmp_path)
        a = tmp_path / "t1"
        b = tmp_path / "t8"
        assert main(["benchmark", str(cfg), "--output", str(a), "--threads", "1"]) == 0
        assert main(["benchmark", str(cfg), "--output", str(b), "--threads", "8"]) == 0
        assert Path(f"{a}_aggregate.csv").read_bytes() == Path(f"{b}_aggregate.csv").read_bytes()

    def test_bundled_uniform_small_config_parses(self):
        # full run is minutes-long; validate the bundled config loads cleanly
        from countsmooth.cli import _load_experiment_config

        cfg = _load_experiment_config(str(REPO_ROOT / "configs" / "uniform_small.yaml"), None)
        assert cfg.k == 1000 and cfg.trials == 50

    def test_config_validation_diagnostics(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("distribution: uniform\nk: 10\nn_grid: [5, 1]\ntrials: 2\nestimators: [empirical]\n")
        assert main(["benchmark", str(bad)]) == 4

    def test_smoothing_output(self, tmp_path):
        cfg = self.write_config(tmp_path, estimators=["npmle", "laplace"])
        prefix = tmp_path / "bench"
        smooth = tmp_path / "smooth.csv"
        code = main(["benchmark", str(cfg), "--output", str(prefix),
                     "--smoothing-out", str(smooth)])
        assert code == 0
        rows = read_csv(smooth)
        assert set(rows[0]) == {"symbol", "count", "p_true", "npmle", "laplace"}
        assert len(rows) == 30


class TestCorpus:
    def test_full_consecutive_empirical_zero_risk(self, tmp_path):
        out = tmp_path / "res.csv"
        code = main([
            "corpus", str(SAMPLE_CORPUS), "--ratio", "1.0", "--mode", "consecutive",
            "--estimator", "empirical", "--trials", "1", "--output", str(out),
        ])
        assert code == 0
        rows = read_csv(out)
        assert float(rows[0]["kl_risk"]) == 0.0

    def test_random_subsample_finite_risks(self, tmp_path):
        out = tmp_path / "res.csv"
        code = main([
            "corpus", str(SAMPLE_CORPUS), "--ratio", "0.2", "--mode", "random",
            "--estimator", "npmle", "--estimator", "mgt-profile",
            "--trials", "2", "--seed", "9", "--output", str(out),
        ])
        assert code == 0
        for row in read_csv(out):
            assert math.isfinite(float(row["kl_risk"]))

    def test_missing_file_usage_error(self, tmp_path):
        assert main(["corpus", str(tmp_path / "nope.txt"), "--ratio", "0.5",
                     "--estimator", "empirical"]) == 4


class TestExportPrior:
    def test_prior_from_corpus_and_pretrained_use(self, tmp_path):
        prior_path = tmp_path / "prior.json"
        code = main(["export-prior", str(SAMPLE_CORPUS), "--output", str(prior_path)])
        assert code == 0
        payload = json.loads(prior_path.read_text())
        assert payload["n_scale"] == 2800.0
        assert len(payload["atoms"]) >= 1

        counts_path = tmp_path / "counts.txt"
        counts_path.write_text("4\n1\n0\n0\n2\n")
        out = tmp_path / "probs.csv"
        assert main(["estimate", str(counts_path),
                     "--estimator", f"pretrained:prior={prior_path}",
                     "--output", str(out)]) == 0
        total = sum(float(r["prob"]) for r in read_csv(out))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestUsage:
    def test_no_subcommand_exits_4(self):
        assert main([]) == 4

    def test_help_exits_0(self):
        assert main(["--help"]) == 0

    def test_unknown_flag_exits_4(self):
        assert main(["fit", "--bogus"]) == 4
