import csv
import math

import pytest

from wnnlm import cli
from wnnlm.pose import build_pose_operator, normalize_measurements, regularization_free_init
from wnnlm.synth import make_scene
from wnnlm.trace import SolveTrace


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cfg(path, **kw):
    path.write_text("# generated\n" + "".join(f"{k} = {v}\n" for k, v in kw.items()))
    return str(path)


@pytest.fixture
def rigid_data(tmp_path):
    cfg = write_cfg(tmp_path / "synth.cfg", synth_K=1, synth_F=8, synth_P=16)
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "data"), "--seed", "3"]) == 0
    return tmp_path / "data"


# ---------------------------------------------------------------- config

def test_parse_config_types_and_comments():
    cfg = cli.parse_config("eta = 0.95  # near affine\n\np=6\nnormalize = no\nschedule = ramp\n")
    assert cfg.eta == 0.95 and cfg.p == 6 and cfg.normalize is False and cfg.schedule == "ramp"


def test_parse_config_errors():
    with pytest.raises(cli.UsageError):
        cli.parse_config("nonsense = 1\n")
    with pytest.raises(cli.UsageError):
        cli.parse_config("just words\n")
    with pytest.raises(cli.ValidationError):
        cli.parse_config("p = four\n")


def test_config_keys_are_dataclass_fields():
    import dataclasses
    names = {f.name for f in dataclasses.fields(cli.ExperimentConfig)}
    text = "".join(f"{n} = {getattr(cli.ExperimentConfig(), n)}\n" for n in names)
    assert cli.parse_config(text) == cli.ExperimentConfig()


# ---------------------------------------------------------------- exit codes

def test_exit_codes(tmp_path, capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["solve-lr", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["solve-lr", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_IO
    bad = write_cfg(tmp_path / "bad.cfg", eta=2.0)
    assert cli.main(["solve-lr", "--config", bad]) == cli.EXIT_VALIDATION
    nofile = write_cfg(tmp_path / "nofile.cfg", obs=tmp_path / "none.txt")
    assert cli.main(["solve-lr", "--config", nofile]) == cli.EXIT_IO
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == cli.EXIT_IO
    err = capsys.readouterr().err
    assert "usage error" in err and "I/O error" in err and "validation error" in err


def test_malformed_observation_file_is_validation_error(tmp_path):
    (tmp_path / "obs.txt").write_text("2 2\n0 0 1\n")
    cfg = write_cfg(tmp_path / "c.cfg", obs=tmp_path / "obs.txt")
    assert cli.main(["solve-lr", "--config", cfg]) == cli.EXIT_VALIDATION


# ---------------------------------------------------------------- oracle

def test_oracle_mode(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "o.cfg", oracle_sigma="3 1", oracle_a="1 2", oracle_trials=1000)
    assert cli.main(["oracle", "--config", cfg, "--out", str(tmp_path)]) == 0
    row = rows(tmp_path / "oracle.csv")[0]
    assert row["violations"] == "0" and float(row["analytic_min"]) == 5.0
    assert "violations=0" in capsys.readouterr().out


# ---------------------------------------------------------------- solves

def test_lr_recovery_truncated_gives_rank_four(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt", gt=rigid_data / "gt.txt",
                    schedule="truncated", mu=1.0, p=4)
    assert cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    summary = rows(tmp_path / "r" / "summary.csv")[0]
    assert summary["rank"] == "4" and summary["recon_error"] != ""
    trace = SolveTrace.from_csv(tmp_path / "r" / "trace.csv")
    assert float(summary["log10_objective"]) == math.log10(trace.final.objective)
    assert float(summary["final_objective"]) == trace.final.objective
    assert (tmp_path / "r" / "plot_trace.py").read_text().startswith('"""Objective')


def test_same_config_twice_gives_identical_outputs(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt", clock="steps")
    for name in ("a", "b"):
        assert cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("summary.csv", "trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_wall_clock_runs_match_except_timing(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt")
    for name in ("a", "b"):
        cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / name)])
    ta, tb = (rows(tmp_path / n / "trace.csv") for n in ("a", "b"))
    for ra, rb in zip(ta, tb):
        ra.pop("elapsed_s"), rb.pop("elapsed_s")
    assert ta == tb
    assert rows(tmp_path / "a" / "summary.csv") == rows(tmp_path / "b" / "summary.csv")


@pytest.mark.parametrize("pipeline", ["admm", "lm", "combined"])
def test_lr_pipelines(tmp_path, rigid_data, pipeline):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt", pipeline=pipeline,
                    admm_max_iters=200)
    assert cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / pipeline)]) == 0
    phases = {r["phase"] for r in rows(tmp_path / pipeline / "trace.csv")}
    assert phases == {"admm": {"admm"}, "lm": {"lm"}, "combined": {"admm", "lm"}}[pipeline]


@pytest.mark.parametrize("pipeline", ["admm", "lm", "combined"])
def test_nrsfm_pipelines(tmp_path, pipeline):
    data = tmp_path / "data"
    synth = write_cfg(tmp_path / "s.cfg", synth_K=2, synth_F=6, synth_P=10, synth_camera="affine")
    assert cli.main(["synth", "--config", synth, "--out", str(data)]) == 0
    cfg = write_cfg(tmp_path / "n.cfg", obs=data / "obs.txt", rotations=data / "rotations.txt",
                    gt=data / "gt.txt", K=2, eta=1.0, normalize="false", schedule="init-rule",
                    pipeline=pipeline)
    assert cli.main(["solve-nrsfm", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    summary = rows(tmp_path / "r" / "summary.csv")[0]
    assert summary["mode"] == "nrsfm" and int(summary["rank"]) <= 10
    if pipeline == "combined":
        assert summary["rank"] == "2" and float(summary["recon_error"]) < 1e-3


def test_nrsfm_requires_rotations(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "n.cfg", obs=rigid_data / "obs.txt")
    assert cli.main(["solve-nrsfm", "--config", cfg]) == cli.EXIT_USAGE


def test_init_rule_needs_nrsfm(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "n.cfg", obs=rigid_data / "obs.txt", schedule="init-rule")
    assert cli.main(["solve-lr", "--config", cfg]) == cli.EXIT_VALIDATION


# ---------------------------------------------------------------- compare and report

@pytest.mark.parametrize("eta", [0.05, 0.95])
def test_compare_combined_never_worse(tmp_path, eta):
    cfg = write_cfg(tmp_path / "c.cfg", eta=eta, synth_noise_std=0.05, compare_count=5,
                    admm_max_iters=300)
    assert cli.main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "comparison.csv")
    assert len(table) == 10
    for k in range(5):
        got = {r["solver"]: float(r["log10_objective"]) for r in table if r["problem"] == str(k)}
        assert got["combined"] <= got["admm"] + 1e-12


def test_compare_zero_weights_reach_pseudo_inverse(tmp_path):
    cfg = cli.parse_config("schedule = zero\np = 20\ncompare_count = 3\nsynth_noise_std = 0.05\n")
    cfg.out = str(tmp_path)
    table = cli.compare_solvers(cfg)
    for k in range(3):
        scene = make_scene(cfg.synth_spec(), cfg.seed + k)
        obs, s = normalize_measurements(scene.obs)
        op = build_pose_operator(obs, cfg.eta, s)
        # stacking (u, v, 1) fits pOSE data exactly, so the target is zero up to rounding
        target = op.loss(regularization_free_init(op))
        assert target <= 1e-20
        for r in table:
            if r["problem"] == k:
                assert abs(float(r["final_objective"]) - target) <= 1e-6 * target + 1e-20


def test_report_aggregates(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt", admm_max_iters=100,
                    compare_count=2)
    cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / "runs" / "one")])
    cli.main(["compare", "--config", cfg, "--out", str(tmp_path / "runs" / "cmp")])
    assert cli.main(["report", "--out", str(tmp_path / "runs")]) == 0
    report = rows(tmp_path / "runs" / "report.csv")
    groups = {(r["source"].split("/")[0], r["group"]) for r in report}
    assert groups == {("one", "combined"), ("cmp", "admm"), ("cmp", "combined")}


def test_harness_csvs_round_trip(tmp_path, rigid_data):
    cfg = write_cfg(tmp_path / "lr.cfg", obs=rigid_data / "obs.txt", admm_max_iters=100)
    cli.main(["solve-lr", "--config", cfg, "--out", str(tmp_path / "r")])
    for r in rows(tmp_path / "r" / "summary.csv") + rows(tmp_path / "r" / "trace.csv"):
        for key in ("final_objective", "objective", "elapsed_s"):
            if key in r:
                assert "%.17g" % float(r[key]) == r[key]
