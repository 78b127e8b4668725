"""``splinepolicy`` command line: one group, one subcommand per experiment stage.

Every subcommand reads an optional YAML/JSON config file, applies flag
overrides, validates the merged mapping and writes ``resolved_config.json``
and ``manifest.json`` next to its outputs.  Output directories default to
``$SPLINEPOLICY_OUT/<subcommand>`` (or ``./runs/<subcommand>``).
"""

from __future__ import annotations

import csv
import logging
import os
import sys
from functools import wraps
from pathlib import Path
from typing import Literal

import click
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from splinepolicy import __version__, bench, demos, execution, flow, sim, trajio
from splinepolicy.bspline import fit_least_squares, reconstruct
from splinepolicy.errors import (
    IllConditionedError,
    SamplingError,
    SplineDomainError,
    StarvationError,
    TrainingError,
)
from splinepolicy.seeding import child_seed

OUT_ENV = "SPLINEPOLICY_OUT"
EXIT_RUNTIME = 1
EXIT_USAGE = 2

RUNTIME_ERRORS = (IllConditionedError, SplineDomainError, StarvationError, TrainingError,
                  SamplingError, OSError, ValueError)


# ------------------------------------------------------------------ configs

def _existing(p: Path) -> Path:
    if not p.exists():
        raise ValueError(f"path does not exist: {p}")
    return p


class BaseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    out: Path | None = None


class FitConfig(BaseConfig):
    input: Path
    n_ctrl: int = Field(8, ge=1)
    degree: int = Field(3, ge=1)

    _check_input = field_validator("input")(_existing)


class GenDemosConfig(BaseConfig):
    modes: list[Literal["static", "dynamic"]] = Field(default_factory=lambda: ["static", "dynamic"],
                                                      min_length=1)
    n_episodes: int = Field(100, ge=1)
    horizon: int = Field(240, ge=1)
    noise_sigma: float = Field(0.03, ge=0)
    P: int = Field(8, ge=1)
    H: int = Field(32, ge=1)
    workers: int = Field(1, ge=1)


class TrainRunConfig(BaseConfig):
    demos: list[Path] = Field(min_length=1)
    steps: int = Field(2000, ge=1)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, ge=1)
    n_ctrl: int = Field(8, ge=4)
    degree: int = Field(3, ge=1)
    hidden: list[int] = Field(default_factory=lambda: [256, 256, 256], min_length=1)
    tau_embed_dim: int = Field(16, ge=0)

    @field_validator("demos")
    @classmethod
    def _demos_exist(cls, v):
        return [_existing(p) for p in v]


class BenchReprConfig(BaseConfig):
    demos: list[Path] = Field(default_factory=list)
    n_chunks: int = Field(200, ge=1)
    T: int = Field(40, ge=2)
    n_coeffs: int = Field(8, ge=1)
    n_bins: int = Field(256, ge=2)
    degree: int = Field(3, ge=1)
    n_episodes: int = Field(20, ge=1)

    @field_validator("demos")
    @classmethod
    def _demos_exist(cls, v):
        return [_existing(p) for p in v]


class BenchSmoothConfig(BaseConfig):
    inputs: list[Path] = Field(default_factory=list)
    n_traj: int = Field(100, ge=1)
    T: int = Field(40, ge=3)
    noise_frac: float = Field(0.05, ge=0)
    n_ctrl: int = Field(8, ge=1)
    degree: int = Field(3, ge=1)

    @field_validator("inputs")
    @classmethod
    def _inputs_exist(cls, v):
        return [_existing(p) for p in v]


class RunSimConfig(BaseConfig):
    model: Path | None = None
    mode: Literal["sync", "async"] = "async"
    env_mode: Literal["static", "dynamic"] = "dynamic"
    refit: bool = True
    n_free: int | None = Field(None, ge=1)
    latency_ticks: int = Field(3, ge=0)
    episodes: int = Field(20, ge=1)
    horizon: int = Field(240, ge=1)
    n_steps: int = Field(10, ge=1)
    replan_every: int | None = Field(None, ge=1)

    @field_validator("model")
    @classmethod
    def _model_exists(cls, v):
        return None if v is None else _existing(v)


# ------------------------------------------------------------------ plumbing

class ConfigError(Exception):
    pass


def _load_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML/JSON: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping, got {type(data).__name__}")
    return data


def _format_errors(exc: ValidationError) -> str:
    lines = [f"{exc.error_count()} configuration error(s):"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def resolve(model: type[BaseConfig], config_file: Path | None, overrides: dict) -> BaseConfig:
    """File values, then non-empty flag values, validated together."""
    data = _load_file(config_file)
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        data[key] = list(value) if isinstance(value, tuple) else value
    try:
        return model(**data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def output_dir(cfg: BaseConfig, default_name: str) -> Path:
    out = cfg.out or Path(os.environ.get(OUT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _digest_input(path: Path) -> str:
    if path.is_dir():
        m = path / "manifest.json"
        return trajio.sha256_file(m) if m.exists() else ""
    return trajio.sha256_file(path)


def finish(out: Path, command: str, cfg: BaseConfig, inputs: list[Path], outputs: list[str]):
    trajio.write_json(out / "resolved_config.json", cfg.model_dump(mode="json"))
    trajio.write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "inputs": {str(p): _digest_input(p) for p in inputs},
        "outputs": {name: trajio.sha256_file(out / name) for name in sorted(outputs)},
    })


def _write_rows(path: Path, rows: list[dict]):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def expand_demo_dirs(paths) -> list[Path]:
    """Demo directories, descending one level into ``gen-demos`` output roots."""
    found = []
    for p in map(Path, paths):
        if "episodes" in _maybe_manifest(p):
            found.append(p)
            continue
        subs = sorted(d for d in p.iterdir() if d.is_dir() and "episodes" in _maybe_manifest(d))
        if not subs:
            raise OSError(f"no demo manifest found under {p}")
        found += subs
    return found


def _maybe_manifest(d: Path) -> dict:
    try:
        return sim.load_manifest(d)
    except OSError:
        return {}


def command(model: type[BaseConfig]):
    """Shared wrapper: ``--config``/``--out``, config resolution and exit codes."""

    def deco(fn):
        @click.option("--out", type=click.Path(path_type=Path), default=None,
                      help=f"Output directory (default ${OUT_ENV}/<command>).")
        @click.option("--config", "config_file", type=click.Path(path_type=Path), default=None,
                      help="YAML or JSON config file; flags override its values.")
        @click.option("--seed", type=int, default=None, help="Root seed.")
        @wraps(fn)
        def wrapper(config_file, **flags):
            try:
                if config_file is not None and not config_file.exists():
                    raise ConfigError(f"config file not found: {config_file}")
                cfg = resolve(model, config_file, flags)
            except ConfigError as exc:
                click.echo(f"error: {exc}", err=True)
                sys.exit(EXIT_USAGE)
            try:
                fn(cfg)
            except RUNTIME_ERRORS as exc:
                click.echo(f"error: {exc}", err=True)
                sys.exit(EXIT_RUNTIME)

        return wrapper

    return deco


# ------------------------------------------------------------------ commands

@click.group()
@click.version_option(__version__, prog_name="splinepolicy")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """B-spline action chunks, flow-matching policies and async execution experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("fit")
@click.argument("input", required=False, type=click.Path(path_type=Path))
@click.option("--n-ctrl", type=int, default=None)
@click.option("--degree", type=int, default=None)
@command(FitConfig)
def cmd_fit(cfg: FitConfig):
    """Fit a clamped B-spline to a trajectory CSV."""
    chunk = trajio.read_trajectory_csv(cfg.input)
    fit = fit_least_squares(chunk, cfg.n_ctrl, cfg.degree)
    recon = reconstruct(fit.curve, chunk.T, chunk.dt).actions
    err = chunk.actions - recon
    out = output_dir(cfg, "fit")
    (out / "curve.json").write_text(trajio.dumps(fit.curve.to_dict()), encoding="utf-8")
    trajio.write_json(out / "residual.json", {
        "residual_sse": fit.residual,
        "rmse": float(np.sqrt(np.mean(err**2))),
        "max_abs_error": float(np.max(np.abs(err))),
        "n_rows": chunk.T,
        "action_dim": chunk.actions.shape[1],
        "dt": chunk.dt,
    })
    finish(out, "fit", cfg, [cfg.input], ["curve.json", "residual.json"])
    click.echo(f"residual {fit.residual:.6g} -> {out}")


@main.command("gen-demos")
@click.option("--mode", "modes", multiple=True, type=click.Choice(["static", "dynamic"]),
              help="Target mode; repeat for several (default both).")
@click.option("--n-episodes", type=int, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--noise-sigma", type=float, default=None)
@click.option("--workers", type=int, default=None)
@command(GenDemosConfig)
def cmd_gen_demos(cfg: GenDemosConfig):
    """Roll out the scripted expert and store demonstration CSVs."""
    out = output_dir(cfg, "demos")
    outputs = []
    for mode in cfg.modes:
        ecfg = sim.EpisodeConfig(mode=mode, horizon=cfg.horizon, noise_sigma=cfg.noise_sigma,
                                 seed=child_seed(cfg.seed, f"demos-{mode}"))
        d = sim.generate_demos(ecfg, cfg.n_episodes, out / mode, cfg.P, cfg.H, name=mode,
                               workers=cfg.workers)
        outputs.append(f"{mode}/manifest.json")
        n_ok = sum(e["success"] for e in sim.load_manifest(d)["episodes"])
        click.echo(f"{mode}: {cfg.n_episodes} episodes, {n_ok} successful -> {d}")
    finish(out, "gen-demos", cfg, [], outputs)


@main.command("train")
@click.option("--demos", multiple=True, type=click.Path(path_type=Path),
              help="Demo directory or gen-demos output root; repeatable.")
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@command(TrainRunConfig)
def cmd_train(cfg: TrainRunConfig):
    """Train a flow-matching policy over B-spline control points."""
    dirs = expand_demo_dirs(cfg.demos)
    P, H = _chunk_layout(dirs)
    spec = flow.BiapChunkSpec(P=P, H=H, n_ctrl=cfg.n_ctrl, degree=cfg.degree)
    targets, obs = demos.load_demo_dataset(dirs, spec)
    tcfg = flow.TrainConfig(steps=cfg.steps, lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed)
    model, trace = flow.fit_model(targets, obs, spec, tcfg, tuple(cfg.hidden), cfg.tau_embed_dim)
    out = output_dir(cfg, "train")
    model.save(out / "model.json")
    (out / "loss_curve.csv").write_text(trace.to_csv(), encoding="utf-8")
    trajio.write_json(out / "train_summary.json", {
        "n_examples": len(targets),
        "initial_loss": trace.initial,
        "final_loss": trace.final,
        "final_over_initial": trace.final / trace.initial,
    })
    finish(out, "train", cfg, dirs, ["model.json", "loss_curve.csv", "train_summary.json"])
    click.echo(f"loss {trace.initial:.4g} -> {trace.final:.4g} over {cfg.steps} steps -> {out}")


def _chunk_layout(dirs: list[Path]) -> tuple[int, int]:
    layouts = {(m["P"], m["H"]) for m in map(sim.load_manifest, dirs)}
    if len(layouts) != 1:
        raise ValueError(f"demo directories disagree on (P, H): {sorted(layouts)}")
    return layouts.pop()


@main.command("bench-repr")
@click.option("--demos", multiple=True, type=click.Path(path_type=Path),
              help="Sample chunks from these demos instead of noise-free expert rollouts.")
@click.option("--n-chunks", type=int, default=None)
@click.option("--T", "T", type=int, default=None, help="Chunk length.")
@command(BenchReprConfig)
def cmd_bench_repr(cfg: BenchReprConfig):
    """Compare reconstruction error of the four action codecs."""
    if cfg.demos:
        dirs = expand_demo_dirs(cfg.demos)
        chunks = demos.sample_chunks(dirs, cfg.n_chunks, cfg.T, np.random.default_rng(
            child_seed(cfg.seed, "bench-repr")))
        source = "demos"
    else:
        dirs = []
        chunks = demos.smooth_demo_chunks(cfg.seed, cfg.n_chunks, cfg.T, cfg.n_episodes)
        source = "noise-free expert rollouts"
    report = bench.repr_benchmark(chunks, cfg.n_coeffs, cfg.n_bins, cfg.degree)
    report["dataset"]["source"] = source
    for entry in report["codecs"].values():
        entry.pop("chunk_errors")
    out = output_dir(cfg, "bench-repr")
    trajio.write_json(out / "repr_scores.json", report)
    finish(out, "bench-repr", cfg, dirs, ["repr_scores.json"])
    for kind, entry in report["codecs"].items():
        s = entry["score"]
        click.echo(f"{kind:20s} mean_error {s['mean_error']:.3g}  snr {s['snr_db']} dB")


@main.command("bench-smooth")
@click.option("--input", "inputs", multiple=True, type=click.Path(path_type=Path),
              help="Trajectory CSV; repeatable.  Without inputs, seeded noisy sinusoids are used.")
@click.option("--n-traj", type=int, default=None)
@click.option("--n-ctrl", type=int, default=None)
@command(BenchSmoothConfig)
def cmd_bench_smooth(cfg: BenchSmoothConfig):
    """Velocity zero-crossing rate and Acc p95 before and after spline fitting."""
    if cfg.inputs:
        chunks = [trajio.read_trajectory_csv(p) for p in cfg.inputs]
        dts = {c.dt for c in chunks}
        if len(dts) != 1:
            raise ValueError(f"input trajectories have different time steps: {sorted(dts)}")
        trajs, dt = [c.actions for c in chunks], dts.pop()
    else:
        trajs = bench.noisy_trajectories(cfg.seed, cfg.n_traj, cfg.T, noise_frac=cfg.noise_frac)
        dt = 1 / 30
    summary, rows = bench.smoothness_benchmark(trajs, cfg.n_ctrl, cfg.degree, dt)
    out = output_dir(cfg, "bench-smooth")
    trajio.write_json(out / "smoothness.json", summary)
    _write_rows(out / "smoothness_per_dim.csv", rows)
    finish(out, "bench-smooth", cfg, list(cfg.inputs), ["smoothness.json", "smoothness_per_dim.csv"])
    click.echo(f"median ZCR reduction {summary['median_zcr_reduction_pct']:.1f}%, "
               f"median Acc p95 reduction {summary['median_acc_p95_reduction_pct']:.1f}%")


@main.command("run-sim")
@click.option("--model", type=click.Path(path_type=Path), default=None,
              help="Trained model JSON; the scripted expert plans chunks when omitted.")
@click.option("--mode", type=click.Choice(["sync", "async"]), default=None)
@click.option("--env-mode", type=click.Choice(["static", "dynamic"]), default=None)
@click.option("--refit", type=click.Choice(["on", "off"]), default=None)
@click.option("--latency-ticks", type=int, default=None)
@click.option("--episodes", type=int, default=None)
@click.option("--n-free", type=int, default=None)
@command(RunSimConfig)
def cmd_run_sim(cfg: RunSimConfig):
    """Closed-loop episodes with synchronous or asynchronous chunk execution."""
    if cfg.model is not None:
        model = flow.FlowPolicyModel.load(cfg.model)
        policy = execution.FlowPolicy(model, cfg.n_steps)
    else:
        policy = execution.ScriptedPolicy()
    ecfg = sim.EpisodeConfig(mode=cfg.env_mode, horizon=cfg.horizon, seed=cfg.seed)
    latency = execution.LatencyModel.from_ticks(cfg.latency_ticks, ecfg.dt)
    opts = execution.RunOptions(cfg.mode, cfg.refit, cfg.n_free, cfg.replan_every)
    out = output_dir(cfg, f"run-sim-{cfg.env_mode}-{cfg.mode}")
    episodes, outputs = [], []
    for seed in sim.episode_seeds(ecfg, cfg.episodes):
        trace = execution.run_episode(policy, ecfg, latency, opts, seed)
        name = f"trace_{seed}.csv"
        (out / name).write_text(trace.to_csv(), encoding="utf-8")
        outputs.append(name)
        episodes.append({"seed": seed, **execution.summarize(trace, ecfg)})
    done = [e["completion_ticks"] or ecfg.horizon for e in episodes]
    summary = {
        "episodes": episodes,
        "success_count": sum(e["success"] for e in episodes),
        "mean_completion_ticks": float(np.mean(done)),
        "mean_tracking_error": float(np.mean([e["tracking_error"] for e in episodes])),
        "mean_boundary_discontinuity": float(np.mean(
            [e["mean_boundary_discontinuity"] for e in episodes])),
    }
    trajio.write_json(out / "summary.json", summary)
    outputs.append("summary.json")
    finish(out, "run-sim", cfg, [cfg.model] if cfg.model else [], outputs)
    click.echo(f"{cfg.env_mode}/{cfg.mode} refit={'on' if cfg.refit else 'off'}: "
               f"{summary['success_count']}/{cfg.episodes} success, "
               f"tracking {summary['mean_tracking_error']:.4f} -> {out}")


if __name__ == "__main__":
    main()
