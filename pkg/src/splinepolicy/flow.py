"""Conditional flow matching over B-spline control points.

The network regresses the straight-path velocity ``C* - z`` at the point
``(1 - tau) z + tau C*`` given an observation; sampling integrates that field
from Gaussian noise with explicit Euler steps.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from splinepolicy.bspline import as_chunk, fit_batch, fit_least_squares
from splinepolicy.errors import SamplingError, TrainingError
from splinepolicy.seeding import child_seed, stream


@dataclass(frozen=True)
class BiapChunkSpec:
    """Chunk layout: ``P`` executed steps before ``t`` and ``H`` steps from ``t``."""

    P: int = 8
    H: int = 32
    n_ctrl: int = 8
    degree: int = 3

    def __post_init__(self):
        if self.P < 1 or self.H < 1:
            raise ValueError("P and H must both be at least 1")
        if not self.degree + 1 <= self.n_ctrl <= self.P + self.H:
            raise ValueError(
                f"need degree + 1 <= n_ctrl <= P + H, got n_ctrl={self.n_ctrl}, "
                f"degree={self.degree}, P+H={self.P + self.H}"
            )

    @property
    def length(self) -> int:
        return self.P + self.H


def make_biap_chunk(traj, t: int, spec: BiapChunkSpec) -> np.ndarray:
    """Rows ``t - P .. t + H - 1`` of ``traj``; windows that would need padding are refused."""
    a = as_chunk(traj).actions
    if t - spec.P < 0 or t + spec.H > a.shape[0]:
        raise ValueError(
            f"window [{t - spec.P}, {t + spec.H}) does not fit a trajectory of {a.shape[0]} rows"
        )
    return a[t - spec.P : t + spec.H]


def chunk_targets(chunk, spec: BiapChunkSpec) -> np.ndarray:
    a = as_chunk(chunk).actions
    if a.shape[0] != spec.length:
        raise ValueError(f"chunk has {a.shape[0]} rows, expected P + H = {spec.length}")
    return fit_least_squares(a, spec.n_ctrl, spec.degree).curve.control_points


@dataclass(frozen=True)
class FlowSample:
    z: np.ndarray
    tau: float
    c_tau: np.ndarray
    target: np.ndarray


def flow_sample(c_star: np.ndarray, rng: np.random.Generator, tau: float | None = None,
                z: np.ndarray | None = None) -> FlowSample:
    c_star = np.asarray(c_star, float)
    if z is None:
        z = rng.standard_normal(c_star.shape)
    if tau is None:
        tau = float(rng.uniform(0.0, 1.0))
    c_tau = (1.0 - tau) * z + tau * c_star
    return FlowSample(z, tau, c_tau, c_star - z)


# ------------------------------------------------------------------ network

def time_embedding(tau: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of ``tau`` in ``[0, 1]``; ``dim == 0`` returns ``tau`` itself."""
    tau = tau.reshape(-1, 1)
    if dim == 0:
        return tau
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=tau.dtype) / max(half - 1, 1))
    ang = tau * freqs[None, :] * 1000.0
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class VectorFieldNet(nn.Module):
    def __init__(self, n_ctrl: int, action_dim: int, obs_dim: int,
                 hidden: Sequence[int] = (256, 256, 256), tau_embed_dim: int = 16):
        super().__init__()
        if tau_embed_dim % 2:
            raise ValueError("tau_embed_dim must be even")
        self.n_ctrl = n_ctrl
        self.action_dim = action_dim
        self.obs_dim = obs_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.tau_embed_dim = tau_embed_dim
        widths = [n_ctrl * action_dim + max(tau_embed_dim, 1) + obs_dim, *self.hidden]
        layers: list[nn.Module] = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(a, b), nn.SiLU()]
        layers.append(nn.Linear(widths[-1], n_ctrl * action_dim))
        self.mlp = nn.Sequential(*layers)

    @property
    def out_dim(self) -> int:
        return self.n_ctrl * self.action_dim

    def forward(self, c_tau: torch.Tensor, tau: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
        b = c_tau.shape[0]
        x = torch.cat([c_tau.reshape(b, -1), time_embedding(tau, self.tau_embed_dim),
                       obs.reshape(b, -1)], dim=1)
        return self.mlp(x).reshape(b, self.n_ctrl, self.action_dim)

    def config(self) -> dict:
        return {"n_ctrl": self.n_ctrl, "action_dim": self.action_dim, "obs_dim": self.obs_dim,
                "hidden": list(self.hidden), "tau_embed_dim": self.tau_embed_dim}


def build_net(seed: int, dtype=torch.float32, **kwargs) -> VectorFieldNet:
    """Network whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(child_seed(seed, "net-init"))
        net = VectorFieldNet(**kwargs)
    return net.to(dtype)


def loss_tensor(net, c_tau, tau, obs, target) -> torch.Tensor:
    """Batch mean of ``||net(c_tau, tau | obs) - target||^2``."""
    pred = net(c_tau, tau, obs)
    return ((pred - target) ** 2).reshape(pred.shape[0], -1).sum(dim=1).mean()


def loss(net, samples: Sequence[FlowSample], obs) -> float:
    if not samples:
        raise ValueError("batch must be non-empty")
    dtype = next(net.parameters()).dtype if isinstance(net, nn.Module) else torch.float64
    c_tau = torch.as_tensor(np.stack([s.c_tau for s in samples]), dtype=dtype)
    tau = torch.as_tensor([s.tau for s in samples], dtype=dtype)
    target = torch.as_tensor(np.stack([s.target for s in samples]), dtype=dtype)
    o = torch.as_tensor(np.asarray(obs, float).reshape(len(samples), -1), dtype=dtype)
    with torch.no_grad():
        return float(loss_tensor(net, c_tau, tau, o, target))


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    checkpoint_every: int = 0


@dataclass
class TrainingTrace:
    losses: list[float] = field(default_factory=list)
    checkpoints: dict[int, dict] = field(default_factory=dict)

    @property
    def initial(self) -> float:
        return self.losses[0]

    @property
    def final(self) -> float:
        return self.losses[-1]

    def to_csv(self) -> str:
        return "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.losses))


def train(net: VectorFieldNet, targets: np.ndarray, obs: np.ndarray,
          cfg: TrainConfig = TrainConfig(), on_checkpoint: Callable | None = None) -> TrainingTrace:
    """Minibatch Adam on the flow-matching loss.

    ``targets`` is ``(M, N, D)`` control points and ``obs`` is ``(M, obs_dim)``,
    both already normalized.  All randomness (batches, noise, times) comes from
    the ``(seed, "train")`` stream, so a fixed seed gives a bitwise-identical
    loss curve.
    """
    targets = np.asarray(targets, float)
    obs = np.asarray(obs, float).reshape(len(targets), -1)
    if len(targets) == 0:
        raise ValueError("training set is empty")
    dtype = next(net.parameters()).dtype
    T = torch.as_tensor(targets, dtype=dtype)
    O = torch.as_tensor(obs, dtype=dtype)
    rng = stream(cfg.seed, "train")
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    trace = TrainingTrace()
    net.train()
    for step in range(cfg.steps):
        idx = torch.as_tensor(rng.integers(0, len(targets), cfg.batch_size))
        c_star = T[idx]
        z = torch.as_tensor(rng.standard_normal(c_star.shape), dtype=dtype)
        tau = torch.as_tensor(rng.uniform(0.0, 1.0, cfg.batch_size), dtype=dtype)
        c_tau = (1 - tau)[:, None, None] * z + tau[:, None, None] * c_star
        value = loss_tensor(net, c_tau, tau, O[idx], c_star - z)
        v = float(value.detach())
        if not math.isfinite(v):
            raise TrainingError("loss became non-finite", step)
        opt.zero_grad()
        value.backward()
        opt.step()
        trace.losses.append(v)
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and on_checkpoint:
            on_checkpoint(step + 1, net)
    net.eval()
    return trace


# ------------------------------------------------------------------ sampling

def _as_field(net) -> Callable:
    if not isinstance(net, nn.Module):
        return net
    dtype = next(net.parameters()).dtype

    def field(c, tau, obs):
        with torch.no_grad():
            out = net(torch.as_tensor(c[None], dtype=dtype),
                      torch.as_tensor([tau], dtype=dtype),
                      torch.as_tensor(np.asarray(obs, float)[None], dtype=dtype))
        return out[0].double().numpy()

    return field


def sample(net, obs, n_steps: int = 10, rng: np.random.Generator | None = None,
           z: np.ndarray | None = None, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Integrate the vector field from ``tau = 0`` to ``1`` with ``n_steps`` Euler steps.

    ``net`` is a :class:`VectorFieldNet` or any callable ``(c, tau, obs) -> dc``.
    The start point is ``z`` when given, else a standard normal draw of
    ``shape`` (taken from the net when omitted).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    field = _as_field(net)
    if z is None:
        if shape is None:
            shape = (net.n_ctrl, net.action_dim)
        z = (rng if rng is not None else np.random.default_rng()).standard_normal(shape)
    c = np.array(z, float)
    h = 1.0 / n_steps
    for k in range(n_steps):
        c = c + h * np.asarray(field(c, k * h, obs), float)
        if not np.all(np.isfinite(c)):
            raise SamplingError(f"non-finite state after Euler step {k + 1}")
    return c


# ------------------------------------------------------------------ model artifact

@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, axis) -> "Normalizer":
        mean = x.mean(axis=axis)
        std = x.std(axis=axis)
        std = np.where(std > 1e-8, std, 1.0)
        return cls(mean, std)

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def _encode_tensor(t: torch.Tensor) -> dict:
    a = t.detach().cpu().numpy().astype("<f4")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_tensor(d: dict) -> torch.Tensor:
    a = np.frombuffer(base64.b64decode(d["data"]), dtype="<f4").reshape(d["shape"])
    return torch.from_numpy(a.copy())


class FlowPolicyModel:
    """Trained network bundled with its normalization statistics and chunk layout."""

    def __init__(self, net: VectorFieldNet, spec: BiapChunkSpec, ctrl_norm: Normalizer,
                 obs_norm: Normalizer, seed: int = 0, meta: dict | None = None):
        self.net = net.eval()
        self.spec = spec
        self.ctrl_norm = ctrl_norm
        self.obs_norm = obs_norm
        self.seed = seed
        self.meta = dict(meta or {})
        self._field = _as_field(net)

    def sample_control_points(self, obs: np.ndarray, rng: np.random.Generator,
                              n_steps: int = 10) -> np.ndarray:
        o = self.obs_norm.apply(np.asarray(obs, float))
        c = sample(self._field, o, n_steps, rng=rng, shape=(self.spec.n_ctrl, self.net.action_dim))
        return self.ctrl_norm.invert(c)

    def to_dict(self) -> dict:
        return {
            "format": "splinepolicy-flow-model/1",
            "net": self.net.config(),
            "spec": asdict(self.spec),
            "seed": self.seed,
            "ctrl_norm": self.ctrl_norm.to_dict(),
            "obs_norm": self.obs_norm.to_dict(),
            "meta": self.meta,
            "parameters": {k: _encode_tensor(v) for k, v in self.net.state_dict().items()},
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "FlowPolicyModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        net = VectorFieldNet(**d["net"])
        net.load_state_dict({k: _decode_tensor(v) for k, v in d["parameters"].items()})
        return cls(net, BiapChunkSpec(**d["spec"]), Normalizer.from_dict(d["ctrl_norm"]),
                   Normalizer.from_dict(d["obs_norm"]), d.get("seed", 0), d.get("meta"))


def fit_model(targets: np.ndarray, obs: np.ndarray, spec: BiapChunkSpec,
              cfg: TrainConfig = TrainConfig(), hidden: Sequence[int] = (256, 256, 256),
              tau_embed_dim: int = 16) -> tuple[FlowPolicyModel, TrainingTrace]:
    """Normalize a dataset, build a seeded network and train it."""
    targets = np.asarray(targets, float)
    obs = np.asarray(obs, float)
    ctrl_norm = Normalizer.fit(targets, axis=(0, 1))
    obs_norm = Normalizer.fit(obs, axis=0)
    net = build_net(cfg.seed, n_ctrl=spec.n_ctrl, action_dim=targets.shape[2],
                    obs_dim=obs.shape[1], hidden=hidden, tau_embed_dim=tau_embed_dim)
    trace = train(net, ctrl_norm.apply(targets), obs_norm.apply(obs), cfg)
    model = FlowPolicyModel(net, spec, ctrl_norm, obs_norm, cfg.seed,
                            {"steps": cfg.steps, "lr": cfg.lr, "batch_size": cfg.batch_size,
                             "n_examples": int(len(targets))})
    return model, trace


def windows_from_episode(actions: np.ndarray, spec: BiapChunkSpec) -> tuple[np.ndarray, np.ndarray]:
    """All complete BiAP windows of one episode and their anchor ticks."""
    a = np.asarray(actions, float)
    ts = np.arange(spec.P, a.shape[0] - spec.H + 1)
    if len(ts) == 0:
        return np.zeros((0, spec.length, a.shape[1])), ts
    return np.stack([a[t - spec.P : t + spec.H] for t in ts]), ts


def batch_targets(chunks: np.ndarray, spec: BiapChunkSpec) -> np.ndarray:
    return fit_batch(chunks, spec.n_ctrl, spec.degree)
