"""Command-line harness: synthetic data, solves, solver comparison and reports.

Every subcommand reads an optional ``key = value`` config file whose keys
are the field names of :class:`ExperimentConfig`. Exit codes: 0 success
(stalled solves included, see the ``stalled`` column), 1 usage, 2 I/O,
3 validation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import math
import os
import sys
import typing
from dataclasses import dataclass

import numpy as np

from . import nrsfm as nr
from .oracle import verify_optimal_permutation
from .penalty import WeightVector, balanced_factor_from_svd, numerical_rank, singular_values
from .pose import (build_pose_operator, format_real, load_observations, normalize_measurements,
                   regularization_free_init)
from .solvers import AdmmConfig, LmConfig, admm_solve, combined_solve, lm_refine
from .synth import SynthSpec, make_scene, synth_generate
from .trace import Clock, SolveTrace

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3

MODES = ("lr-recovery", "nrsfm", "oracle", "synth")
PIPELINES = ("combined", "admm", "lm")
SCHEDULES = ("nuclear", "truncated", "ramp", "zero", "init-rule", "explicit")

SUMMARY_FIELDS = ("mode", "pipeline", "seed", "final_objective", "log10_objective", "rank",
                  "recon_error", "stalled", "admm_status", "lm_status")
COMPARE_FIELDS = ("problem", "seed", "solver", "final_objective", "log10_objective", "rank",
                  "stalled")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "lr-recovery"
    obs: str = ""
    rotations: str = ""
    gt: str = ""
    eval_frame: int = 0
    eta: float = 0.05
    normalize: bool = True
    schedule: str = "truncated"
    mu: float = 1.0
    free: int = 4
    weights: str = ""
    xi: float = nr.XI_DEFAULT
    eps: float = nr.EPS_DEFAULT
    p: int = 4
    K: int = nr.K_DEFAULT
    pipeline: str = "combined"
    clock: str = "wall"
    admm_rho: float = 0.0  # 0 selects the mode default
    admm_rho_growth: float = 1.0
    admm_rho_max: float = 1e3
    admm_max_iters: int = 2000
    admm_primal_tol: float = 1e-8
    admm_dual_tol: float = 1e-8
    admm_stall_window: int = 10
    admm_stall_tol: float = 1e-6
    lm_lambda0: float = 1e-4
    lm_alpha: float = 2.0
    lm_max_iters: int = 500
    lm_rel_tol: float = 1e-9
    lm_max_rejects: int = 30
    synth_F: int = 10
    synth_P: int = 20
    synth_K: int = 1
    synth_noise_std: float = 0.0
    synth_missing_fraction: float = 0.0
    synth_camera: str = "perspective"
    synth_depth_offset: float = 5.0
    oracle_sigma: str = "3 1"
    oracle_a: str = "1 2"
    oracle_trials: int = 1000
    compare_count: int = 5
    seed: int = 0
    out: str = "out"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.pipeline not in PIPELINES:
            raise ValidationError(f"pipeline must be one of {PIPELINES}")
        if self.schedule not in SCHEDULES:
            raise ValidationError(f"schedule must be one of {SCHEDULES}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [0, 1]")
        if self.p < 1 or self.K < 1:
            raise ValidationError("p and K must be positive")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.clock not in ("wall", "steps"):
            raise ValidationError("clock must be 'wall' or 'steps'")

    def admm_config(self, default_rho: float) -> AdmmConfig:
        rho = self.admm_rho or default_rho
        return AdmmConfig(rho=rho, rho_growth=self.admm_rho_growth,
                          rho_max=max(self.admm_rho_max, rho), max_iters=self.admm_max_iters,
                          primal_tol=self.admm_primal_tol, dual_tol=self.admm_dual_tol,
                          stall_window=self.admm_stall_window, stall_tol=self.admm_stall_tol)

    def lm_config(self) -> LmConfig:
        return LmConfig(lambda0=self.lm_lambda0, alpha=self.lm_alpha, max_iters=self.lm_max_iters,
                        rel_tol=self.lm_rel_tol, max_rejects=self.lm_max_rejects)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(F=self.synth_F, P=self.synth_P, K=self.synth_K,
                         noise_std=self.synth_noise_std,
                         missing_fraction=self.synth_missing_fraction,
                         camera=self.synth_camera, depth_offset=self.synth_depth_offset)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(kind, text: str):
    if kind is bool:
        low = text.lower()
        if low in _TRUE | _FALSE:
            return low in _TRUE
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines to ``base``; ``#`` starts a comment."""
    cfg = dataclasses.replace(base) if base else ExperimentConfig()
    types = typing.get_type_hints(ExperimentConfig)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _convert(types[key], value))
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: {key}: {exc}") from None
    return cfg


def _reals(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.replace(",", " ").split()])
    except ValueError:
        raise ValidationError(f"{name} must be a list of reals") from None


def make_weights(cfg: ExperimentConfig, n: int, X0=None) -> WeightVector:
    """Weight vector of length ``n`` (``K`` for the init rule)."""
    try:
        if cfg.schedule == "nuclear":
            return WeightVector.nuclear(n, cfg.mu)
        if cfg.schedule == "truncated":
            return WeightVector.truncated(n, cfg.mu, cfg.free)
        if cfg.schedule == "ramp":
            return WeightVector.linear_ramp(n, cfg.mu, cfg.free)
        if cfg.schedule == "zero":
            return WeightVector.zeros(n)
        if cfg.schedule == "explicit":
            return WeightVector(_reals(cfg.weights, "weights"))
        if X0 is None:
            raise ValidationError("schedule 'init-rule' needs mode nrsfm")
        return nr.weights_from_init(X0, cfg.K, cfg.xi, cfg.eps)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------- solves

@dataclass
class RunResult:
    trace: SolveTrace
    estimate: np.ndarray  # 3F x P structure used for evaluation
    rank: int
    frame_points: typing.Callable[[int], np.ndarray]


def solve_lr(cfg: ExperimentConfig, obs, clock: Clock) -> RunResult:
    scale = 1.0
    if cfg.normalize:
        obs, scale = normalize_measurements(obs)
    op = build_pose_operator(obs, cfg.eta, scale)
    n = min(op.shape)
    w = make_weights(cfg, n)
    if cfg.pipeline == "admm":
        X, trace = admm_solve(op, w, cfg.admm_config(1.0), clock=clock)
    elif cfg.pipeline == "lm":
        fact0 = balanced_factor_from_svd(regularization_free_init(op), cfg.p)
        fact, trace = lm_refine(op, WeightVector(w.extended(cfg.p)), fact0, cfg.lm_config(), clock)
        X = fact.X
    else:
        fact, trace = combined_solve(op, w, cfg.p, cfg.admm_config(1.0), cfg.lm_config(), clock)
        X = fact.X
    return RunResult(trace, X, numerical_rank(singular_values(X)),
                     lambda i: X[3 * i: 3 * i + 3])


def solve_nrsfm(cfg: ExperimentConfig, obs, R, clock: Clock) -> RunResult:
    pb = nr.NrsfmProblem(obs, R, cfg.K, cfg.eta, normalize=cfg.normalize)
    X0 = pb.closed_form_structure()
    if cfg.schedule == "init-rule":
        w = make_weights(cfg, cfg.K, X0)
    else:
        w = WeightVector(make_weights(cfg, cfg.K).extended(cfg.K))
    admm_cfg = cfg.admm_config(nr.NRSFM_ADMM.rho)
    if cfg.pipeline == "admm":
        Z, _, trace = nr.nrsfm_admm(pb, w, admm_cfg, clock)
        Xs = Z
    elif cfg.pipeline == "lm":
        X0s = nr.reshape_to_sharp(X0)
        sol0 = nr.NrsfmSolution(balanced_factor_from_svd(X0s, cfg.K), pb.best_translation(X0s))
        sol, trace = nr.nrsfm_lm(pb, w, sol0, cfg.lm_config(), clock)
        Xs = sol.Xsharp
    else:
        sol, trace = nr.nrsfm_solve(pb, w, cfg.lm_config(), admm_cfg, clock)
        Xs = sol.Xsharp
    X = nr.reshape_from_sharp(Xs)
    return RunResult(trace, X, numerical_rank(singular_values(Xs)),
                     lambda i: X[3 * i: 3 * i + 3])


def _summary_row(cfg, result: RunResult, recon) -> dict:
    final = result.trace.final.objective
    return {
        "mode": cfg.mode, "pipeline": cfg.pipeline, "seed": cfg.seed,
        "final_objective": format_real(final),
        "log10_objective": format_real(math.log10(final)) if final > 0 else "-inf",
        "rank": result.rank,
        "recon_error": "" if recon is None else format_real(recon),
        "stalled": int(result.trace.stalled),
        "admm_status": result.trace.status.get("admm", ""),
        "lm_status": result.trace.status.get("lm", ""),
    }


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


PLOT_SCRIPT = '''\
"""Objective against time and iteration for {trace}; needs matplotlib."""
import csv
import math
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({trace!r})))
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for phase in sorted({{r["phase"] for r in rows}}):
    sel = [r for r in rows if r["phase"] == phase]
    y = [math.log10(float(r["objective"])) for r in sel]
    axes[0].plot([float(r["elapsed_s"]) for r in sel], y, label=phase)
    axes[1].plot(range(len(sel)), y, label=phase)
axes[0].set_xlabel("elapsed")
axes[1].set_xlabel("trace row")
for ax in axes:
    ax.set_ylabel("log10 objective")
    ax.legend()
fig.tight_layout()
fig.savefig({png!r})
'''


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one configured solve and write ``trace.csv``, ``summary.csv`` and ``plot_trace.py``."""
    cfg.validate()
    if cfg.mode not in ("lr-recovery", "nrsfm"):
        raise ValidationError(f"run_experiment handles lr-recovery and nrsfm, not {cfg.mode}")
    if not cfg.obs:
        raise UsageError("config key 'obs' is required")
    obs = load_observations(cfg.obs)
    clock = Clock(cfg.clock)
    if cfg.mode == "nrsfm":
        if not cfg.rotations:
            raise UsageError("config key 'rotations' is required in nrsfm mode")
        result = solve_nrsfm(cfg, obs, nr.load_rotations(cfg.rotations), clock)
    else:
        result = solve_lr(cfg, obs, clock)
    recon = None
    if cfg.gt:
        gt = nr.load_structure(cfg.gt)
        if not 0 <= cfg.eval_frame < obs.F:
            raise ValidationError(f"eval_frame {cfg.eval_frame} outside the sequence")
        recon = nr.reconstruction_error(result.frame_points(cfg.eval_frame), gt)
    os.makedirs(cfg.out, exist_ok=True)
    trace_path = os.path.join(cfg.out, "trace.csv")
    result.trace.to_csv(trace_path)
    write_csv(os.path.join(cfg.out, "summary.csv"), SUMMARY_FIELDS,
              [_summary_row(cfg, result, recon)])
    with open(os.path.join(cfg.out, "plot_trace.py"), "w", encoding="utf-8") as fh:
        fh.write(PLOT_SCRIPT.format(trace="trace.csv", png="trace.png"))
    if result.trace.stalled:
        print(f"note: solver stalled ({result.trace.status})", file=sys.stderr)
    return EXIT_OK


def compare_solvers(cfg: ExperimentConfig) -> list[dict]:
    """ADMM alone against ADMM followed by LM on ``compare_count`` synthetic problems.

    Writes ``comparison.csv``; raises if the combined objective ever exceeds
    the ADMM one by more than 1e-12 in log10.
    """
    cfg.validate()
    spec = cfg.synth_spec()
    rows = []
    worse = []
    for k in range(cfg.compare_count):
        seed = cfg.seed + k
        scene = make_scene(spec, seed)
        finals = {}
        for solver in ("admm", "combined"):
            run_cfg = dataclasses.replace(cfg, pipeline=solver, seed=seed)
            if cfg.mode == "nrsfm":
                res = solve_nrsfm(run_cfg, scene.obs, scene.R, Clock(cfg.clock))
            else:
                res = solve_lr(run_cfg, scene.obs, Clock(cfg.clock))
            final = res.trace.final.objective
            finals[solver] = math.log10(final) if final > 0 else -math.inf
            rows.append({"problem": k, "seed": seed, "solver": solver,
                         "final_objective": format_real(final),
                         "log10_objective": format_real(finals[solver]),
                         "rank": res.rank, "stalled": int(res.trace.stalled)})
        if finals["combined"] > finals["admm"] + 1e-12:
            worse.append(k)
    os.makedirs(cfg.out, exist_ok=True)
    write_csv(os.path.join(cfg.out, "comparison.csv"), COMPARE_FIELDS, rows)
    if worse:
        raise ValidationError(f"combined objective above ADMM on problems {worse}")
    return rows


def run_oracle(cfg: ExperimentConfig) -> dict:
    sigma = _reals(cfg.oracle_sigma, "oracle_sigma")
    a = _reals(cfg.oracle_a, "oracle_a")
    try:
        report = verify_optimal_permutation(sigma, a, cfg.oracle_trials, cfg.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    row = report.as_row()
    for key in ("min_sampled", "analytic_min"):
        row[key] = format_real(row[key])
    os.makedirs(cfg.out, exist_ok=True)
    write_csv(os.path.join(cfg.out, "oracle.csv"), list(row), [row])
    return row


def run_synth(cfg: ExperimentConfig):
    try:
        return synth_generate(cfg.synth_spec(), cfg.seed, cfg.out, cfg.eval_frame)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def build_report(out_dir) -> list[dict]:
    """Collect every ``summary.csv`` and ``comparison.csv`` below ``out_dir`` into ``report.csv``."""
    rows = []
    for path in sorted(glob.glob(os.path.join(out_dir, "**", "summary.csv"), recursive=True)):
        for r in read_csv(path):
            rows.append({"source": os.path.relpath(path, out_dir), "group": r["pipeline"],
                         "count": 1, "mean_log10_objective": r["log10_objective"],
                         "stalled": r["stalled"]})
    for path in sorted(glob.glob(os.path.join(out_dir, "**", "comparison.csv"), recursive=True)):
        table = read_csv(path)
        for solver in sorted({r["solver"] for r in table}):
            sel = [r for r in table if r["solver"] == solver]
            mean = float(np.mean([float(r["log10_objective"]) for r in sel]))
            rows.append({"source": os.path.relpath(path, out_dir), "group": solver,
                         "count": len(sel), "mean_log10_objective": format_real(mean),
                         "stalled": sum(int(r["stalled"]) for r in sel)})
    if not rows:
        raise FileNotFoundError(f"no summary.csv or comparison.csv under {out_dir}")
    write_csv(os.path.join(out_dir, "report.csv"), list(rows[0]), rows)
    return rows


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "synth": "synth",
    "solve-lr": "lr-recovery",
    "solve-nrsfm": "nrsfm",
    "oracle": "oracle",
    "compare": None,
    "report": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wnnlm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; keys are ExperimentConfig fields")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), cfg)
    if COMMANDS[args.command]:
        cfg.mode = COMMANDS[args.command]
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        if args.command == "synth":
            run_synth(cfg)
        elif args.command in ("solve-lr", "solve-nrsfm"):
            return run_experiment(cfg)
        elif args.command == "oracle":
            row = run_oracle(cfg)
            print(f"violations={row['violations']} analytic_min={row['analytic_min']} "
                  f"min_sampled={row['min_sampled']}")
        elif args.command == "compare":
            compare_solvers(cfg)
        else:
            for row in build_report(cfg.out):
                print(f"{row['source']}\t{row['group']}\t{row['mean_log10_objective']}")
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
