"""Turning demo directories into flow-matching training sets."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from splinepolicy import sim, trajio
from splinepolicy.seeding import child_seed, stream
from splinepolicy.flow import BiapChunkSpec, batch_targets, windows_from_episode


def load_demo_dataset(demo_dirs: Sequence, spec: BiapChunkSpec) -> tuple[np.ndarray, np.ndarray]:
    """Control-point targets ``(M, N, D)`` and observations ``(M, obs_dim)``.

    Plant states are not stored in the demo CSVs; they are recovered by
    replaying each episode's actions from its seeded initial state.
    """
    targets, observations = [], []
    for d in demo_dirs:
        manifest = sim.load_manifest(d)
        cfg = sim.config_from_manifest(manifest)
        for ep in manifest["episodes"]:
            chunk = trajio.read_trajectory_csv(Path(d) / ep["file"])
            windows, ts = windows_from_episode(chunk.actions, spec)
            if len(ts) == 0:
                continue
            states = sim.replay(replace(cfg, seed=ep["seed"]), ep["seed"], chunk.actions)
            ecfg = replace(cfg, seed=ep["seed"])
            observations.append(np.stack(
                [sim.encode_observation(states[: t + 1], ecfg) for t in ts]))
            targets.append(batch_targets(windows, spec))
    if not targets:
        raise ValueError("demo directories contain no complete training windows")
    return np.concatenate(targets), np.concatenate(observations)


def sample_chunks(demo_dirs: Sequence, n_chunks: int, T: int, rng: np.random.Generator) -> list[np.ndarray]:
    """``n_chunks`` random ``T``-row windows drawn uniformly over episodes and offsets."""
    episodes = []
    for d in demo_dirs:
        manifest = sim.load_manifest(d)
        for ep in manifest["episodes"]:
            a = trajio.read_trajectory_csv(Path(d) / ep["file"]).actions
            if a.shape[0] >= T:
                episodes.append(a)
    if not episodes:
        raise ValueError(f"no episode has at least {T} rows")
    out = []
    for _ in range(n_chunks):
        a = episodes[int(rng.integers(len(episodes)))]
        s = int(rng.integers(0, a.shape[0] - T + 1))
        out.append(a[s : s + T])
    return out


def smooth_demo_chunks(seed: int, n_chunks: int = 200, T: int = 40,
                       n_episodes: int = 20) -> list[np.ndarray]:
    """Random windows of noise-free expert rollouts, half static and half dynamic.

    Nothing is written to disk; this is the reference dataset for comparing codecs.
    """
    episodes = []
    for mode in ("static", "dynamic"):
        cfg = sim.EpisodeConfig(mode=mode, noise_sigma=0.0, seed=child_seed(seed, f"smooth-{mode}"))
        episodes += [sim.rollout_expert(cfg, s).actions for s in sim.episode_seeds(cfg, n_episodes)]
    if episodes[0].shape[0] < T:
        raise ValueError(f"episodes have {episodes[0].shape[0]} rows, fewer than T={T}")
    rng = stream(seed, "smooth-chunks")
    out = []
    for _ in range(n_chunks):
        a = episodes[int(rng.integers(len(episodes)))]
        s = int(rng.integers(0, a.shape[0] - T + 1))
        out.append(a[s : s + T].copy())
    return out
