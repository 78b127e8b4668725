"""A deterministic 2-D pursuit plant with a scripted expert.

The plant is a velocity-commanded point with a gripper scalar; the target is
either fixed (``static``) or rides a circle at constant angular speed
(``dynamic``).  Actions are ``[vx, vy, gripper]``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from splinepolicy import trajio
from splinepolicy.seeding import stream
from splinepolicy.trace import ExecutionTrace

ACTION_DIM = 3
HISTORY_FRAMES = 8
OBS_DIM = 9 + 2 * HISTORY_FRAMES


@dataclass(frozen=True)
class EpisodeConfig:
    mode: str = "static"
    rotation_period: float = 10.0
    control_rate: float = 30.0
    horizon: int = 240
    workspace: tuple[float, float, float, float] = (-1.0, -1.0, 1.0, 1.0)
    noise_sigma: float = 0.03
    seed: int = 0
    max_speed: float = 1.0
    gain: float = 3.0
    gain_ramp: float = 0.5
    gripper_scale: float = 0.15
    orbit_radius: float = 0.4
    min_start_distance: float = 0.4
    success_radius_frac: float = 0.02
    dwell_ticks: int = 15
    # ceiling on Acc p95 of noise-free expert actions, in action-units/s^2
    expert_acc_bound: float = 12.0

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise ValueError(f"mode must be 'static' or 'dynamic', not {self.mode!r}")
        if not self.rotation_period > 0:
            raise ValueError("rotation_period must be positive")
        if not self.control_rate > 0:
            raise ValueError("control_rate must be positive")
        x0, y0, x1, y1 = self.workspace
        if not (x1 > x0 and y1 > y0):
            raise ValueError("workspace box is degenerate")
        object.__setattr__(self, "workspace", tuple(float(v) for v in self.workspace))

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def diagonal(self) -> float:
        x0, y0, x1, y1 = self.workspace
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def success_radius(self) -> float:
        return self.success_radius_frac * self.diagonal

    @property
    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.workspace
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PlantState:
    position: np.ndarray
    velocity: np.ndarray
    gripper: float
    target_position: np.ndarray
    target_phase: float
    tick: int = 0
    phase0: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.gripper],
                               self.target_position, [self.target_phase]])


def _wrap(phi: float) -> float:
    return float(phi % (2 * math.pi))


def target_at(cfg: EpisodeConfig, phase0: float, tick: float, static_target=None):
    """Target position and phase after ``tick`` ticks (phase computed in closed form)."""
    if cfg.mode == "static":
        return np.asarray(static_target, float), _wrap(phase0)
    phase = phase0 + 2 * math.pi * tick * cfg.dt / cfg.rotation_period
    pos = cfg.center + cfg.orbit_radius * np.array([math.cos(phase), math.sin(phase)])
    return pos, _wrap(phase)


def target_velocity(state: PlantState, cfg: EpisodeConfig) -> np.ndarray:
    if cfg.mode == "static":
        return np.zeros(2)
    w = 2 * math.pi / cfg.rotation_period
    phi = state.target_phase
    return cfg.orbit_radius * w * np.array([-math.sin(phi), math.cos(phi)])


def initial_state(cfg: EpisodeConfig, seed: int | None = None) -> PlantState:
    rng = stream(cfg.seed if seed is None else seed, "initial-state")
    x0, y0, x1, y1 = cfg.workspace
    c = cfg.center
    half = np.array([x1 - x0, y1 - y0]) / 2
    phase0 = float(rng.uniform(0, 2 * math.pi))
    if cfg.mode == "static":
        target = c + rng.uniform(-0.6, 0.6, 2) * half
    else:
        target, _ = target_at(cfg, phase0, 0)
    while True:
        pos = c + rng.uniform(-0.8, 0.8, 2) * half
        if np.linalg.norm(pos - target) >= cfg.min_start_distance:
            break
    return PlantState(pos, np.zeros(2), 1.0, np.asarray(target, float), _wrap(phase0), 0, phase0)


def step(state: PlantState, action, cfg: EpisodeConfig) -> PlantState:
    """Advance one tick: integrate the velocity command and move the target."""
    a = np.asarray(action, float)
    if a.shape != (ACTION_DIM,) or not np.all(np.isfinite(a)):
        raise ValueError(f"action must be a finite {ACTION_DIM}-vector, got {a!r}")
    x0, y0, x1, y1 = cfg.workspace
    vel = a[:2].copy()
    pos = state.position + vel * cfg.dt
    pos = np.clip(pos, [x0, y0], [x1, y1])
    grip = float(min(max(a[2], 0.0), 1.0))
    tick = state.tick + 1
    if cfg.mode == "dynamic":
        target, phase = target_at(cfg, state.phase0, tick)
    else:
        target, phase = state.target_position, state.target_phase
    return PlantState(pos, vel, grip, target, phase, tick, state.phase0)


def hold_action(state: PlantState) -> np.ndarray:
    return np.array([0.0, 0.0, state.gripper])


def expert_action(state: PlantState, cfg: EpisodeConfig, rng: np.random.Generator | None = None):
    """Smooth proportional pursuit of the target one interval ahead.

    The gain ramps in with a smoothstep over ``gain_ramp`` seconds, the pursuit
    speed saturates softly at ``max_speed`` via ``tanh``, and in dynamic mode
    the target's velocity is fed forward.  The gripper closes as the plant
    approaches the target.
    """
    ahead, _ = target_at(cfg, state.phase0, state.tick + 1, state.target_position)
    err = ahead - state.position
    dist = float(np.linalg.norm(err))
    s = min(state.tick * cfg.dt / cfg.gain_ramp, 1.0) if cfg.gain_ramp > 0 else 1.0
    ramp = s * s * (3 - 2 * s)
    v = np.zeros(2)
    if dist > 0:
        speed = cfg.max_speed * math.tanh(cfg.gain * dist / cfg.max_speed)
        v = ramp * speed * err / dist
    if cfg.mode == "dynamic":
        nxt, _ = target_at(cfg, state.phase0, state.tick + 2)
        v = v + ramp * (nxt - ahead) / cfg.dt
    grip = 1.0 - math.exp(-((dist / cfg.gripper_scale) ** 2))
    a = np.array([v[0], v[1], grip])
    if rng is not None and cfg.noise_sigma > 0:
        a = a + rng.normal(0.0, cfg.noise_sigma, ACTION_DIM)
    return a


def encode_observation(states: Sequence[PlantState], cfg: EpisodeConfig) -> np.ndarray:
    """Feature vector from the most recent states (last element is current).

    Current position, gripper, target position and velocity, the offset to the
    target, and the previous ``HISTORY_FRAMES`` positions relative to now
    (padded with the oldest available state).
    """
    cur = states[-1]
    past = list(states[-HISTORY_FRAMES - 1 : -1])
    if not past:
        past = [cur]
    past = [past[0]] * (HISTORY_FRAMES - len(past)) + past
    hist = np.concatenate([p.position - cur.position for p in past])
    return np.concatenate([
        cur.position, [cur.gripper], cur.target_position, target_velocity(cur, cfg),
        cur.target_position - cur.position, hist,
    ])


# ------------------------------------------------------------- evaluation

def _within(trace, cfg: EpisodeConfig, radius: float | None) -> np.ndarray:
    r = cfg.success_radius if radius is None else radius
    return np.linalg.norm(np.asarray(trace.positions) - np.asarray(trace.targets), axis=1) <= r


def success(trace, cfg: EpisodeConfig, radius: float | None = None, dwell: int | None = None) -> bool:
    """True iff the plant is within ``radius`` of the target for the final ``dwell`` ticks."""
    k = cfg.dwell_ticks if dwell is None else dwell
    inside = _within(trace, cfg, radius)
    return bool(len(inside) >= k and inside[-k:].all())


def completion_ticks(trace, cfg: EpisodeConfig, radius: float | None = None,
                     dwell: int | None = None) -> int | None:
    """Ticks elapsed when the dwell condition is first met, or ``None``."""
    k = cfg.dwell_ticks if dwell is None else dwell
    run = 0
    for i, ok in enumerate(_within(trace, cfg, radius)):
        run = run + 1 if ok else 0
        if run >= k:
            return i + 1
    return None


# ------------------------------------------------------------- demos

def rollout_expert(cfg: EpisodeConfig, seed: int) -> ExecutionTrace:
    cfg = replace(cfg, seed=seed)
    rng = stream(seed, "expert-noise")
    state = initial_state(cfg, seed)
    n = cfg.horizon
    actions = np.zeros((n, ACTION_DIM))
    pos = np.zeros((n, 2))
    grip = np.zeros(n)
    tgt = np.zeros((n, 2))
    for k in range(n):
        a = expert_action(state, cfg, rng)
        state = step(state, a, cfg)
        actions[k], pos[k], grip[k], tgt[k] = a, state.position, state.gripper, state.target_position
    zeros = np.zeros(n, int)
    return ExecutionTrace(cfg.dt, actions, pos, grip, tgt, zeros, zeros.astype(bool))


def replay(cfg: EpisodeConfig, seed: int, actions: np.ndarray) -> list[PlantState]:
    """States ``s_0 .. s_T`` visited when ``actions`` are applied from the seeded start."""
    cfg = replace(cfg, seed=seed)
    states = [initial_state(cfg, seed)]
    for a in np.asarray(actions, float):
        states.append(step(states[-1], a, cfg))
    return states


def episode_seeds(cfg: EpisodeConfig, n_episodes: int) -> list[int]:
    return [cfg.seed + i for i in range(n_episodes)]


def window_count(horizon: int, P: int, H: int) -> int:
    """Training windows ``t`` with ``t - P >= 0`` and ``t + H <= horizon``."""
    return max(horizon - P - H + 1, 0)


def _write_episode(args) -> dict:
    cfg, seed, out_dir = args
    tr = rollout_expert(cfg, seed)
    path = Path(out_dir) / f"ep_{seed}.csv"
    try:
        trajio.write_trajectory_csv(path, tr.actions, cfg.dt)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
    return {
        "seed": seed,
        "file": path.name,
        "n_ticks": cfg.horizon,
        "success": success(tr, replace(cfg, seed=seed)),
        "completion_ticks": completion_ticks(tr, cfg),
        "sha256": trajio.sha256_file(path),
    }


def generate_demos(cfg: EpisodeConfig, n_episodes: int, out_dir, P: int = 8, H: int = 32,
                   name: str | None = None, workers: int = 1) -> Path:
    """Write ``n_episodes`` expert trajectories plus ``manifest.json`` into ``out_dir``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if cfg.horizon < P + H:
        raise ValueError(f"horizon {cfg.horizon} shorter than a P+H={P + H} chunk")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create demo directory {out}: {exc}") from exc
    jobs = [(cfg, s, str(out)) for s in episode_seeds(cfg, n_episodes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            episodes = list(ex.map(_write_episode, jobs))
    else:
        episodes = [_write_episode(j) for j in jobs]
    manifest = {
        "name": name or out.name,
        "config": cfg.to_dict(),
        "P": P,
        "H": H,
        "n_episodes": n_episodes,
        "n_chunks": sum(window_count(e["n_ticks"], P, H) for e in episodes),
        "episodes": episodes,
    }
    trajio.write_json(out / "manifest.json", manifest)
    return out


def load_manifest(demo_dir) -> dict:
    path = Path(demo_dir) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read demo manifest {path}: {exc}") from exc


def config_from_manifest(manifest: dict) -> EpisodeConfig:
    d = dict(manifest["config"])
    d["workspace"] = tuple(d["workspace"])
    return EpisodeConfig(**d)


def smooth_noisy_trajectory(rng: np.random.Generator, T: int = 40, D: int = 3,
                            noise_frac: float = 0.05, dt: float = 1 / 30) -> tuple[np.ndarray, np.ndarray]:
    """A smooth random-sinusoid base and the same base plus iid noise.

    Noise standard deviation is ``noise_frac`` times the base's per-dimension range.
    """
    t = np.arange(T) * dt
    base = np.zeros((T, D))
    for d in range(D):
        for _ in range(3):
            f = rng.uniform(0.2, 1.2)
            base[:, d] += rng.uniform(0.2, 1.0) * np.sin(2 * math.pi * f * t + rng.uniform(0, 2 * math.pi))
    rng_span = base.max(axis=0) - base.min(axis=0)
    noisy = base + rng.normal(size=(T, D)) * noise_frac * rng_span
    return base, noisy
