import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from taperkit import specio
from taperkit.kernels import ImpulseResponse
from taperkit.policies import ExponentialPolicy, IntegralPolicy, LinearPolicy, MedPolicy

LPOP_SPEC = {"modes": [{"c": 1.0, "lambda": 0.5}, {"c": -0.5, "lambda": 0.9}], "tail_tol": 1e-9}
ALL_POS_SPEC = {"modes": [{"c": 1.0, "lambda": 0.5}], "tail_tol": 1e-9}


def run_cli(args, cwd, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "taperkit.cli", *args],
        capture_output=True, text=True, cwd=cwd, env=env,
    )


@pytest.fixture
def specs(tmp_path):
    lpop = tmp_path / "lpop.json"
    lpop.write_text(json.dumps(LPOP_SPEC))
    allpos = tmp_path / "allpos.json"
    allpos.write_text(json.dumps(ALL_POS_SPEC))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    policy = tmp_path / "integral.json"
    policy.write_text(json.dumps({"type": "integral", "k_plus": 0.7, "k_minus": 2.2}))
    return tmp_path


class TestSpecIO:
    def test_system_from_modes(self):
        g = specio.system_from_dict(LPOP_SPEC)
        assert g.values[0] == pytest.approx(0.5)

    def test_system_from_kernel(self):
        g = specio.system_from_dict({"kernel": [0.5, 0.05, -0.155]})
        assert isinstance(g, ImpulseResponse)
        assert g.horizon == 3

    def test_missing_fields_raise(self):
        with pytest.raises(specio.SpecError, match="modes|kernel"):
            specio.system_from_dict({})
        with pytest.raises(specio.SpecError, match="lambda"):
            specio.system_from_dict({"modes": [{"c": 1.0}]})

    def test_policy_round_trip(self):
        for policy in (
            IntegralPolicy(k_plus=0.5, k_minus=1.0, delta=-0.2),
            MedPolicy(y_nat_lb_mode="lipschitz", l_nat=0.3),
            LinearPolicy(u0=1.0, rate=0.05),
            ExponentialPolicy(u0=1.0, rate=0.9),
        ):
            doc = specio.policy_to_dict(policy)
            assert specio.policy_from_dict(doc) == policy

    def test_unknown_policy_type(self):
        with pytest.raises(specio.SpecError, match="unknown type"):
            specio.policy_from_dict({"type": "pid"})

    def test_invalid_gains_become_spec_error(self):
        with pytest.raises(specio.SpecError):
            specio.policy_from_dict({"type": "integral", "k_plus": 2.0, "k_minus": 1.0})


class TestCertifyCommand:
    def test_certified_exit_zero(self, specs):
        result = run_cli(["certify", "lpop.json"], specs)
        assert result.returncode == 0
        doc = json.loads(result.stdout)
        assert doc["status"] == "certified"
        assert doc["tau0"] == 2

    def test_violation_exit_one(self, specs):
        result = run_cli(["certify", "allpos.json"], specs)
        assert result.returncode == 1
        doc = json.loads(result.stdout)
        assert doc["status"] == "violation"
        assert "no tau0" in doc["reason"]

    def test_malformed_json_exit_two(self, specs):
        result = run_cli(["certify", "bad.json"], specs)
        assert result.returncode == 2
        assert "bad.json" in result.stderr

    def test_missing_subcommand_usage_error(self, specs):
        result = run_cli([], specs)
        assert result.returncode == 2


class TestSimulateCommand:
    def test_writes_trace_and_metrics(self, specs):
        result = run_cli([
            "simulate", "--system", "lpop.json", "--policy", "integral.json",
            "--y-min", "-1.0", "--t-taper", "10", "--warmup-steps", "5",
            "--noise", "0.25", "--out-dir", "sim",
        ], specs)
        assert result.returncode == 0, result.stderr
        trace = (specs / "sim" / "trace.csv").read_text().splitlines()
        assert trace[0] == "t,u,y,y_nat,y_min,phase"
        assert len(trace) == 17  # header + 16 rows (15 doses + final state)
        assert trace[1].endswith("warmup")
        assert trace[-1].endswith("taper")
        metrics = json.loads((specs / "sim" / "metrics.json").read_text())
        assert "avg_cum_dose" in metrics

    def test_zero_taper_window_warmup_only(self, specs):
        result = run_cli([
            "simulate", "--system", "lpop.json", "--policy", "integral.json",
            "--y-min", "-1.0", "--t-taper", "0", "--warmup-steps", "4",
            "--out-dir", "sim0",
        ], specs)
        assert result.returncode == 0, result.stderr
        metrics = json.loads((specs / "sim0" / "metrics.json").read_text())
        assert metrics["warmup_only"] is True

    def test_print_effective_config(self, specs):
        result = run_cli([
            "simulate", "--system", "lpop.json", "--policy", "integral.json",
            "--y-min", "-1.0", "--t-taper", "2", "--warmup-steps", "0",
            "--out-dir", "simc", "--print-effective-config", "--seed", "5",
        ], specs)
        assert result.returncode == 0
        config = json.loads(result.stdout.split("wrote")[0])
        assert config["seed"] == 5
        assert config["policy"]["type"] == "integral"


class TestSweepCommand:
    def test_byte_identical_reruns(self, specs):
        args = ["sweep", "--systems", "D", "--n-units", "8", "--n-rates", "3",
                "--deltas", "-0.5", "0.0", "0.5", "--seed", "77"]
        r1 = run_cli(args + ["--out-dir", "s1"], specs)
        r2 = run_cli(args + ["--out-dir", "s2"], specs)
        assert r1.returncode == 0, r1.stderr
        assert r2.returncode == 0, r2.stderr
        for name in ("sweep_D_summary.csv", "sweep_D_units.csv", "manifest.json"):
            assert (specs / "s1" / name).read_bytes() == (specs / "s2" / name).read_bytes()

    def test_env_seed_override(self, specs):
        args = ["sweep", "--systems", "D", "--n-units", "4", "--n-rates", "2",
                "--deltas", "0.0"]
        r1 = run_cli(args + ["--out-dir", "e1"], specs, env_extra={"TAPER_SEED": "123"})
        r2 = run_cli(args + ["--out-dir", "e2"], specs, env_extra={"TAPER_SEED": "123"})
        r3 = run_cli(args + ["--out-dir", "e3"], specs, env_extra={"TAPER_SEED": "124"})
        assert r1.returncode == 0 and r2.returncode == 0 and r3.returncode == 0
        assert (specs / "e1" / "sweep_D_units.csv").read_bytes() == \
            (specs / "e2" / "sweep_D_units.csv").read_bytes()
        assert (specs / "e1" / "sweep_D_units.csv").read_bytes() != \
            (specs / "e3" / "sweep_D_units.csv").read_bytes()
        manifest = json.loads((specs / "e1" / "manifest.json").read_text())
        assert manifest["seed"] == 123
        assert "constants_sha256" in manifest

    def test_jobs_flag_matches_serial(self, specs):
        args = ["sweep", "--systems", "D", "--n-units", "6", "--n-rates", "2",
                "--deltas", "0.0", "0.5", "--seed", "9"]
        r1 = run_cli(args + ["--out-dir", "j1", "--jobs", "1"], specs)
        r2 = run_cli(args + ["--out-dir", "j2", "--jobs", "2"], specs)
        assert r1.returncode == 0 and r2.returncode == 0
        assert (specs / "j1" / "sweep_D_summary.csv").read_bytes() == \
            (specs / "j2" / "sweep_D_summary.csv").read_bytes()


class TestAblateCommand:
    def test_one_curve_per_pair(self, specs):
        result = run_cli([
            "ablate", "--system", "D", "--pairs", "0.5,1.5;1,1", "--n-units", "5",
            "--deltas", "0.0", "0.5", "--out-dir", "ab", "--seed", "3",
        ], specs)
        assert result.returncode == 0, result.stderr
        lines = (specs / "ab" / "ablation_D.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + 2 pairs x 2 deltas
        assert "theorem_compliant" in lines[0]


class TestVerifyCommand:
    def test_quick_suite_exit_zero(self, specs):
        result = run_cli(["verify", "--quick", "--seed", "1", "--json-out", "verify.json"], specs)
        assert result.returncode == 0, result.stdout + result.stderr
        doc = json.loads((specs / "verify.json").read_text())
        names = {s["name"] for s in doc["suites"]}
        assert {"theorem2_window", "lemma1_sane_runs", "med_oracle", "prop2"} <= names
