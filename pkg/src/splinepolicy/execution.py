"""Synchronous and asynchronous chunk execution on the simulated plant.

Time is counted in control ticks.  A policy returns a curve over one BiAP
chunk of ``P + H`` ticks whose position ``P`` is the tick at which inference
started.  The executor dispatches exactly one action per tick.

* ``sync``: when the queue runs dry the arm holds still while inference runs,
  then the whole future part of the chunk is executed.  The plant was frozen,
  so the chunk is re-anchored: position ``P`` is dispatched first.
* ``async``: the queue keeps draining while inference runs.  A chunk that
  started at tick ``k0`` and arrives at ``k0 + L`` replaces the queue from
  tick ``k0 + L`` on with ``H - L`` actions taken from positions ``P ...``;
  the next inference starts at the splice tick.

In both modes the last ``P`` dispatched actions sit at history positions
``0 .. P - 1`` of the new chunk.  When refitting is on, the leading control
points of each new curve are re-solved against that history before sampling.
"""

from __future__ import annotations

import logging
import math
import queue as queue_mod
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from splinepolicy import sim
from splinepolicy.bspline import BSplineCurve, curve_from_points, evaluate, fit_least_squares
from splinepolicy.errors import StarvationError
from splinepolicy.flow import BiapChunkSpec, FlowPolicyModel
from splinepolicy.refit import RefitRequest, boundary_discontinuity, default_n_free, refit
from splinepolicy.seeding import stream
from splinepolicy.trace import ExecutionTrace

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ policies

class ChunkPolicy(Protocol):
    spec: BiapChunkSpec

    def plan(self, states: Sequence[sim.PlantState], actions: Sequence[np.ndarray],
             cfg: sim.EpisodeConfig, rng: np.random.Generator) -> BSplineCurve: ...


class FlowPolicy:
    def __init__(self, model: FlowPolicyModel, n_steps: int = 10):
        self.model = model
        self.spec = model.spec
        self.n_steps = n_steps

    def plan(self, states, actions, cfg, rng):
        obs = sim.encode_observation(states, cfg)
        ctrl = self.model.sample_control_points(obs, rng, self.n_steps)
        return curve_from_points(ctrl, self.spec.degree)


class ScriptedPolicy:
    """Plans by rolling the noise-free expert forward ``H`` ticks on a copy of the plant."""

    def __init__(self, spec: BiapChunkSpec = BiapChunkSpec()):
        self.spec = spec

    def plan(self, states, actions, cfg, rng):
        hist = padded_history(actions, self.spec.P, sim.hold_action(states[0]))
        st = states[-1]
        future = []
        for _ in range(self.spec.H):
            a = sim.expert_action(st, cfg, None)
            future.append(a)
            st = sim.step(st, a, cfg)
        chunk = np.vstack([hist, np.array(future)])
        return fit_least_squares(chunk, self.spec.n_ctrl, self.spec.degree).curve


class ConstantCurvePolicy:
    """Always returns the same curve (a test stub)."""

    def __init__(self, curve: BSplineCurve, spec: BiapChunkSpec = BiapChunkSpec()):
        self.curve = curve
        self.spec = spec

    def plan(self, states, actions, cfg, rng):
        return self.curve


def padded_history(actions: Sequence[np.ndarray], P: int, fill: np.ndarray) -> np.ndarray:
    """Last ``P`` actions, front-padded with ``fill`` when fewer exist."""
    recent = [np.asarray(a, float) for a in list(actions)[-P:]]
    return np.array([fill] * (P - len(recent)) + recent, float)


# ------------------------------------------------------------------ latency

@dataclass(frozen=True)
class LatencyModel:
    kind: str = "fixed"
    mean: float = 0.090
    jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "seeded-jitter"):
            raise ValueError(f"unknown latency kind {self.kind!r}")
        if self.mean < 0 or self.jitter < 0:
            raise ValueError("latency mean and jitter must be non-negative")

    @classmethod
    def from_ticks(cls, ticks: int, dt: float) -> "LatencyModel":
        return cls("fixed", ticks * dt)

    def ticks(self, dt: float, rng: np.random.Generator | None = None) -> int:
        """Latency rounded up to whole ticks (90 ms at 30 Hz is 3 ticks)."""
        lat = self.mean
        if self.kind == "seeded-jitter":
            lat = lat + (rng.uniform(-self.jitter, self.jitter) if rng is not None else 0.0)
            return max(1, math.ceil(lat / dt - 1e-9))
        return max(0, math.ceil(lat / dt - 1e-9))


# ------------------------------------------------------------------ queue and splice

@dataclass(frozen=True)
class ActionQueue:
    """Planned actions for consecutive ticks ``start, start + 1, ...``."""

    start: int = 0
    actions: np.ndarray = field(default_factory=lambda: np.zeros((0, sim.ACTION_DIM)))
    generation: int = 0

    @property
    def end(self) -> int:
        return self.start + len(self.actions)

    def has(self, tick: int) -> bool:
        return self.start <= tick < self.end

    def action_at(self, tick: int) -> np.ndarray:
        if not self.has(tick):
            raise KeyError(tick)
        return self.actions[tick - self.start]

    def remaining_after(self, tick: int) -> int:
        return max(0, self.end - max(tick + 1, self.start))


@dataclass(frozen=True)
class SpliceInfo:
    curve: BSplineCurve
    ticks: np.ndarray
    history_params: np.ndarray
    n_free: int
    discontinuity: float
    skipped: bool = False


def chunk_param(position: float, spec: BiapChunkSpec) -> float:
    return position / (spec.length - 1)


def splice(queue: ActionQueue, new_curve: BSplineCurve, executed_history: np.ndarray,
           current_tick: int, delay_ticks: int, spec: BiapChunkSpec, *, refit_on: bool = True,
           n_free: int | None = None, dt: float = 1 / 30) -> tuple[ActionQueue, SpliceInfo]:
    """Replace everything queued after ``current_tick`` with samples of ``new_curve``.

    The last ``P`` dispatched actions are re-anchored onto the chunk's history
    positions ``0 .. P - 1`` and ticks ``current_tick + 1 .. current_tick + H - delay``
    are filled from positions ``P ..``.  The final ``delay`` future positions
    are dropped, so a replan is due before the queue runs dry.
    """
    hist = np.asarray(executed_history, float)
    if hist.shape[0] != spec.P:
        raise ValueError(f"executed history must have P={spec.P} rows, got {hist.shape[0]}")
    n_new = spec.H - delay_ticks
    u_hist = np.arange(spec.P) / (spec.length - 1)
    if n_new <= 0:
        log.warning("splice at tick %d has an empty replacement window (delay %d >= H %d)",
                    current_tick, delay_ticks, spec.H)
        return queue, SpliceInfo(new_curve, np.zeros(0, int), u_hist, 0, float("nan"), True)
    curve = new_curve
    nf = 0
    if refit_on:
        nf = n_free if n_free is not None else default_n_free(new_curve.knots, u_hist)
        curve = refit(RefitRequest(new_curve, hist, nf, u_hist)).refitted_curve
    positions = spec.P + np.arange(n_new)
    u = positions / (spec.length - 1)
    new_actions = evaluate(curve, u)
    jump = boundary_discontinuity(hist, curve, dt, first_param=float(u[0]))
    ticks = current_tick + 1 + np.arange(n_new)
    new_queue = ActionQueue(current_tick + 1, new_actions, queue.generation + 1)
    return new_queue, SpliceInfo(curve, ticks, u_hist, nf, jump)


# ------------------------------------------------------------------ executor

@dataclass(frozen=True)
class RunOptions:
    mode: str = "async"
    refit: bool = True
    n_free: int | None = None
    replan_every: int | None = None

    def __post_init__(self):
        if self.mode not in ("sync", "async"):
            raise ValueError(f"mode must be 'sync' or 'async', not {self.mode!r}")
        if self.replan_every is not None and self.replan_every < 1:
            raise ValueError("replan_every must be positive")


def run_episode(policy: ChunkPolicy, cfg: sim.EpisodeConfig, latency: LatencyModel,
                options: RunOptions = RunOptions(), seed: int | None = None) -> ExecutionTrace:
    """Simulated-time rollout; bitwise reproducible for fixed seeds."""
    seed = cfg.seed if seed is None else seed
    cfg = replace(cfg, seed=seed)
    spec = policy.spec
    rng_policy = stream(seed, "policy")
    rng_latency = stream(seed, "latency")
    dt = cfg.dt
    async_mode = options.mode == "async"

    state = sim.initial_state(cfg, seed)
    states = [state]
    dispatched: list[np.ndarray] = []
    fill = sim.hold_action(state)
    n = cfg.horizon
    acts = np.zeros((n, sim.ACTION_DIM))
    pos = np.zeros((n, 2))
    grip = np.zeros(n)
    tgt = np.zeros((n, 2))
    gen = np.zeros(n, int)
    splice_flag = np.zeros(n, bool)
    trace = ExecutionTrace(dt, acts, pos, grip, tgt, gen, splice_flag)

    q = ActionQueue(0)
    pending: dict | None = None
    next_start = 0
    last_start = None
    first_ready: int | None = None

    def start_inference(k: int) -> dict:
        lat = latency.ticks(dt, rng_latency)
        curve = policy.plan(states[: k + 1], dispatched, cfg, rng_policy)
        rec = {"generation": q.generation + 1, "start_tick": k, "obs_tick": k,
               "ready_tick": k + lat, "latency_ticks": lat}
        trace.inferences.append(rec)
        return {"curve": curve, "start": k, "ready": k + lat, "latency": lat, "record": rec}

    def deliver(k: int, job: dict):
        nonlocal q
        delay = job["latency"] if async_mode else 0
        hist = padded_history(dispatched, spec.P, fill)
        q, info = splice(q, job["curve"], hist, k - 1, delay, spec,
                         refit_on=options.refit, n_free=options.n_free, dt=dt)
        job["record"]["n_free"] = info.n_free
        if not info.skipped:
            trace.discontinuities.append(info.discontinuity)
            splice_flag[k] = True

    for k in range(n):
        # at most one inference may start per tick; a zero-latency job lands immediately
        while True:
            if pending is not None and pending["ready"] == k:
                deliver(k, pending)
                if first_ready is None:
                    first_ready = k
                pending = None
                if async_mode and options.replan_every is None:
                    next_start = k if last_start != k else k + 1
            can_start = pending is None and (last_start is None or last_start < k)
            if async_mode:
                want = can_start and k >= next_start
            else:
                want = can_start and not q.has(k)
            if not want:
                break
            pending = start_inference(k)
            last_start = k
            if async_mode and options.replan_every is not None:
                next_start = k + options.replan_every
            if pending["ready"] != k:
                break

        if q.has(k):
            a = q.action_at(k)
            gen[k] = q.generation
        elif async_mode and first_ready is not None:
            raise StarvationError(k, f"action queue underrun at tick {k}: "
                                     f"inference latency exceeds the queued horizon")
        else:
            a = sim.hold_action(state)
            gen[k] = q.generation
        state = sim.step(state, a, cfg)
        states.append(state)
        dispatched.append(np.array(a, float))
        acts[k], pos[k], grip[k], tgt[k] = a, state.position, state.gripper, state.target_position
    return trace


def run_sync(policy, cfg, latency, refit_on: bool = True, seed: int | None = None, **kw):
    return run_episode(policy, cfg, latency, RunOptions("sync", refit_on, **kw), seed)


def run_async(policy, cfg, latency, refit_on: bool = True, seed: int | None = None, **kw):
    return run_episode(policy, cfg, latency, RunOptions("async", refit_on, **kw), seed)


def summarize(trace: ExecutionTrace, cfg: sim.EpisodeConfig) -> dict:
    disc = [d for d in trace.discontinuities if np.isfinite(d)]
    return {
        "success": sim.success(trace, cfg),
        "completion_ticks": sim.completion_ticks(trace, cfg),
        "mean_boundary_discontinuity": float(np.mean(disc)) if disc else 0.0,
        "tracking_error": float(np.mean(trace.tracking_errors())),
        "n_splices": int(trace.splice.sum()),
        "n_ticks": trace.n_ticks,
    }


# ------------------------------------------------------------------ wall clock (demo only)

def run_async_wallclock(policy: ChunkPolicy, cfg: sim.EpisodeConfig, refit_on: bool = True,
                        seed: int | None = None, extra_latency: float = 0.0) -> ExecutionTrace:
    """Real-time variant with an inference thread; not reproducible, for demos.

    The worker hands finished curves to the executor through a one-slot
    queue; only the executor touches the action queue.
    """
    seed = cfg.seed if seed is None else seed
    cfg = replace(cfg, seed=seed)
    spec = policy.spec
    dt = cfg.dt
    rng = stream(seed, "policy")
    state = sim.initial_state(cfg, seed)
    states = [state]
    dispatched: list[np.ndarray] = []
    fill = sim.hold_action(state)
    n = cfg.horizon
    trace = ExecutionTrace(dt, np.zeros((n, sim.ACTION_DIM)), np.zeros((n, 2)), np.zeros(n),
                           np.zeros((n, 2)), np.zeros(n, int), np.zeros(n, bool))
    slot: queue_mod.Queue = queue_mod.Queue(maxsize=1)
    requests: queue_mod.Queue = queue_mod.Queue(maxsize=1)
    stop = threading.Event()

    def worker():
        while not stop.is_set():
            try:
                k0, snap_states, snap_actions = requests.get(timeout=0.05)
            except queue_mod.Empty:
                continue
            curve = policy.plan(snap_states, snap_actions, cfg, rng)
            if extra_latency:
                time.sleep(extra_latency)
            slot.put((k0, curve))

    th = threading.Thread(target=worker, daemon=True)
    th.start()
    q = ActionQueue(0)
    requests.put((0, list(states), list(dispatched)))
    t0 = time.perf_counter()
    try:
        for k in range(n):
            try:
                k0, curve = slot.get_nowait()
            except queue_mod.Empty:
                pass
            else:
                delay = min(k - k0, spec.H)
                hist = padded_history(dispatched, spec.P, fill)
                q, info = splice(q, curve, hist, k - 1, delay, spec, refit_on=refit_on, dt=dt)
                if not info.skipped:
                    trace.splice[k] = True
                    trace.discontinuities.append(info.discontinuity)
                requests.put((k, list(states), list(dispatched)))
            a = q.action_at(k) if q.has(k) else sim.hold_action(state)
            trace.generation[k] = q.generation
            state = sim.step(state, a, cfg)
            states.append(state)
            dispatched.append(np.array(a, float))
            trace.actions[k], trace.positions[k] = a, state.position
            trace.grippers[k], trace.targets[k] = state.gripper, state.target_position
            sleep = t0 + (k + 1) * dt - time.perf_counter()
            if sleep > 0:
                time.sleep(sleep)
    finally:
        stop.set()
        th.join(timeout=1.0)
    return trace
