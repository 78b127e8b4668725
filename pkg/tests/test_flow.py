import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from splinepolicy import flow
from splinepolicy.bspline import fit_least_squares
from splinepolicy.errors import SamplingError, TrainingError
from splinepolicy.flow import (
    BiapChunkSpec,
    FlowPolicyModel,
    TrainConfig,
    build_net,
    chunk_targets,
    flow_sample,
    make_biap_chunk,
    sample,
)

SPEC = BiapChunkSpec()


# ---------------------------------------------------------------- chunks

def test_spec_defaults_and_validation():
    assert (SPEC.P, SPEC.H, SPEC.n_ctrl, SPEC.degree, SPEC.length) == (8, 32, 8, 3, 40)
    for bad in ({"P": 0}, {"H": 0}, {"n_ctrl": 3}, {"P": 2, "H": 3, "n_ctrl": 6}):
        with pytest.raises(ValueError):
            BiapChunkSpec(**bad)


def test_window_at_p_starts_at_row_zero(rng):
    traj = rng.normal(size=(60, 3))
    np.testing.assert_array_equal(make_biap_chunk(traj, 8, SPEC), traj[:40])


def test_window_matches_slicing(rng):
    traj = rng.normal(size=(100, 3))
    for t in rng.integers(8, 100 - 32 + 1, 10):
        np.testing.assert_array_equal(make_biap_chunk(traj, int(t), SPEC),
                                      traj[int(t) - 8 : int(t) + 32])


@pytest.mark.parametrize("t", [7, 69])
def test_window_out_of_range(rng, t):
    with pytest.raises(ValueError):
        make_biap_chunk(rng.normal(size=(100, 3)), t, SPEC)


def test_windows_from_episode_skip_boundaries(rng):
    traj = rng.normal(size=(60, 2))
    windows, ts = flow.windows_from_episode(traj, SPEC)
    assert ts.tolist() == list(range(8, 29))
    np.testing.assert_array_equal(windows[3], traj[3:43])


def test_chunk_targets_are_fit_control_points(rng):
    chunk = rng.normal(size=(40, 3))
    np.testing.assert_array_equal(chunk_targets(chunk, SPEC),
                                  fit_least_squares(chunk, 8, 3).curve.control_points)
    with pytest.raises(ValueError):
        chunk_targets(chunk[:39], SPEC)


# ---------------------------------------------------------------- flow path

def test_flow_sample_endpoints(rng):
    c = rng.normal(size=(8, 3))
    np.testing.assert_array_equal(flow_sample(c, rng, tau=1.0).c_tau, c)
    s0 = flow_sample(c, rng, tau=0.0)
    np.testing.assert_array_equal(s0.c_tau, s0.z)


@given(st.integers(0, 2**32 - 1))
def test_flow_sample_is_linear_path(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(8, 3))
    s = flow_sample(c, rng)
    assert 0 <= s.tau <= 1
    assert np.array_equal(s.c_tau - ((1 - s.tau) * s.z + s.tau * c), np.zeros_like(c))
    np.testing.assert_array_equal(s.target, c - s.z)


# ---------------------------------------------------------------- loss

class Oracle(torch.nn.Module):
    """Returns a fixed tensor regardless of input."""

    def __init__(self, out):
        super().__init__()
        self.out = torch.nn.Parameter(torch.as_tensor(out, dtype=torch.float64))

    def forward(self, c_tau, tau, obs):
        return self.out


def test_loss_zero_for_exact_prediction(rng):
    samples = [flow_sample(rng.normal(size=(8, 3)), rng) for _ in range(4)]
    targets = np.stack([s.target for s in samples])
    assert flow.loss(Oracle(targets), samples, np.zeros((4, 5))) == 0.0


def test_loss_of_zero_output(rng):
    samples = [flow_sample(rng.normal(size=(8, 3)), rng) for _ in range(6)]
    expect = np.mean([np.sum(s.target**2) for s in samples])
    got = flow.loss(Oracle(np.zeros((6, 8, 3))), samples, np.zeros((6, 2)))
    assert got == pytest.approx(expect, rel=1e-12)


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        flow.loss(Oracle(np.zeros((1, 8, 3))), [], np.zeros((0, 1)))


def test_gradient_matches_finite_differences(rng):
    # 1 control point, 1 dim, raw tau, one obs feature: 3 -> 2 -> 1 is 11 parameters
    net = build_net(3, torch.float64, n_ctrl=1, action_dim=1, obs_dim=1, hidden=(2,),
                    tau_embed_dim=0)
    params = list(net.parameters())
    assert sum(p.numel() for p in params) == 11
    c_tau = torch.as_tensor(rng.normal(size=(5, 1, 1)))
    tau = torch.as_tensor(rng.uniform(size=5))
    obs = torch.as_tensor(rng.normal(size=(5, 1)))
    target = torch.as_tensor(rng.normal(size=(5, 1, 1)))
    value = flow.loss_tensor(net, c_tau, tau, obs, target)
    grads = torch.autograd.grad(value, params)
    h = 1e-6
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = flow.loss_tensor(net, c_tau, tau, obs, target).item()
                flat[i] = old - h
                down = flow.loss_tensor(net, c_tau, tau, obs, target).item()
                flat[i] = old
                fd = (up - down) / (2 * h)
                an = g.view(-1)[i].item()
                assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-3)


def test_time_embedding_shapes():
    tau = torch.linspace(0, 1, 5)
    assert flow.time_embedding(tau, 16).shape == (5, 16)
    assert flow.time_embedding(tau, 0).shape == (5, 1)
    with pytest.raises(ValueError):
        flow.VectorFieldNet(8, 3, 4, tau_embed_dim=3)


def test_net_output_shape():
    net = build_net(0, n_ctrl=8, action_dim=3, obs_dim=25)
    out = net(torch.zeros(4, 8, 3), torch.zeros(4), torch.zeros(4, 25))
    assert out.shape == (4, 8, 3)


def test_net_init_depends_only_on_seed():
    a = build_net(11, n_ctrl=8, action_dim=3, obs_dim=4)
    torch.manual_seed(999)
    torch.rand(10)
    b = build_net(11, n_ctrl=8, action_dim=3, obs_dim=4)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


# ---------------------------------------------------------------- sampling

@pytest.mark.parametrize("n_steps", [1, 5, 10])
def test_constant_field_integrates_exactly(rng, n_steps):
    z = rng.normal(size=(8, 3))
    v = rng.normal(size=(8, 3))
    out = sample(lambda c, tau, obs: v, None, n_steps, z=z)
    np.testing.assert_allclose(out, z + v, atol=1e-12)


def test_true_field_reaches_target_in_one_step(rng):
    z = rng.normal(size=(8, 3))
    c_star = rng.normal(size=(8, 3))
    for n in (1, 3, 10):
        np.testing.assert_allclose(sample(lambda c, tau, obs: c_star - z, None, n, z=z), c_star,
                                   atol=1e-12)


def test_sampler_rejects_bad_input(rng):
    with pytest.raises(ValueError):
        sample(lambda c, t, o: c, None, 0, z=np.zeros((2, 2)))
    with pytest.raises(SamplingError):
        sample(lambda c, t, o: np.full_like(c, np.inf), None, 2, z=np.zeros((2, 2)))


# ---------------------------------------------------------------- training

def toy_dataset(rng, n=256):
    """One mode: a fixed control-point matrix plus a little jitter, constant observation."""
    center = rng.normal(size=(8, 3))
    return center + 0.05 * rng.normal(size=(n, 8, 3)), np.zeros((n, 4))


def test_toy_training_converges(rng):
    targets, obs = toy_dataset(rng)
    net = build_net(0, n_ctrl=8, action_dim=3, obs_dim=4)
    trace = flow.train(net, targets, obs, TrainConfig(steps=2000, seed=0))
    assert len(trace.losses) == 2000
    assert trace.final < 0.25 * trace.initial
    assert np.mean(trace.losses[-100:]) < 0.25 * np.mean(trace.losses[:10])


def test_training_is_deterministic(rng):
    targets, obs = toy_dataset(rng, 64)
    runs = []
    for _ in range(2):
        net = build_net(4, n_ctrl=8, action_dim=3, obs_dim=4, hidden=(32, 32))
        runs.append(flow.train(net, targets, obs, TrainConfig(steps=50, seed=4)).losses)
    assert runs[0] == runs[1]


def test_zero_learning_rate_freezes_parameters(rng):
    targets, obs = toy_dataset(rng, 64)
    net = build_net(1, n_ctrl=8, action_dim=3, obs_dim=4, hidden=(16,))
    before = [p.detach().clone() for p in net.parameters()]
    probe = [flow_sample(t, np.random.default_rng(0)) for t in targets[:16]]
    l0 = flow.loss(net, probe, obs[:16])
    flow.train(net, targets, obs, TrainConfig(steps=20, lr=0.0, seed=1))
    for a, b in zip(before, net.parameters()):
        assert torch.equal(a, b)
    assert flow.loss(net, probe, obs[:16]) == l0


def test_divergence_raises_training_error(rng):
    targets, obs = toy_dataset(rng, 32)
    targets[0, 0, 0] = np.inf
    net = build_net(0, n_ctrl=8, action_dim=3, obs_dim=4, hidden=(8,))
    with pytest.raises(TrainingError) as exc:
        flow.train(net, targets, obs, TrainConfig(steps=200, batch_size=32, seed=0))
    assert exc.value.step >= 0


def test_samples_approach_data_over_checkpoints():
    rng = np.random.default_rng(8)
    targets, obs = toy_dataset(rng)
    z = np.random.default_rng(1).standard_normal((32, 8, 3))
    dists = []

    def measure(step, net):
        out = [sample(net, obs[0], 10, z=zi) for zi in z]
        d = [np.min(np.linalg.norm((targets - o).reshape(len(targets), -1), axis=1)) for o in out]
        dists.append(float(np.mean(d)))

    net = build_net(0, n_ctrl=8, action_dim=3, obs_dim=4)
    measure(0, net)
    flow.train(net, targets, obs, TrainConfig(steps=1600, seed=0, checkpoint_every=400),
               on_checkpoint=measure)
    assert len(dists) == 5
    assert all(b < a for a, b in zip(dists, dists[1:])), dists


# ---------------------------------------------------------------- artifact

def test_model_round_trip(tmp_path, rng):
    targets, obs = toy_dataset(rng, 64)
    model, _ = flow.fit_model(targets, obs, SPEC, TrainConfig(steps=30, seed=2), hidden=(16, 16))
    path = model.save(tmp_path / "model.json")
    back = FlowPolicyModel.load(path)
    assert back.spec == SPEC and back.seed == 2
    a = model.sample_control_points(obs[0], np.random.default_rng(5))
    b = back.sample_control_points(obs[0], np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_normalizer_round_trip(rng):
    x = rng.normal(3.0, 2.0, size=(100, 8, 3))
    norm = flow.Normalizer.fit(x, axis=(0, 1))
    z = norm.apply(x)
    np.testing.assert_allclose(z.mean(axis=(0, 1)), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=(0, 1)), 1, atol=1e-12)
    np.testing.assert_allclose(norm.invert(z), x, atol=1e-12)
