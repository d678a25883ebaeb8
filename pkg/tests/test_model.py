import math

import numpy as np
import pytest

from hrtfnp import autodiff as ad
from hrtfnp.errors import ShapeError
from hrtfnp.model import (
    ModelConfig,
    Prediction,
    SphericalConvCNP,
    init_params,
    load_checkpoint,
    predictive_log_density,
    risen_softplus,
    save_checkpoint,
)
from hrtfnp.sphere import unit
from hrtfnp.tasks import Task, mirror_task

MICRO = ModelConfig(
    grid_size=8,
    bandwidth=3,
    channels=4,
    cnn_blocks=1,
    mlp_blocks=1,
    freq_kernel=3,
    anchors=2,
    sigma_floor=0.01,
    freq_bins=5,
)


def make_task(rng, c=6, t=8, bins=5):
    locs = unit(rng.standard_normal((c + t, 3)))
    feats = rng.standard_normal((c + t, 2, bins)) + 1j * rng.standard_normal(
        (c + t, 2, bins)
    )
    return Task(
        locs[:c], feats[:c], locs[c:], feats[c:], np.arange(c), np.arange(c, c + t), c
    )


@pytest.fixture(scope="module")
def micro_model():
    return SphericalConvCNP(MICRO)


@pytest.fixture(scope="module")
def micro_params():
    return init_params(MICRO, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# config and head


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(channels=5)
    with pytest.raises(ValueError):
        ModelConfig(grid_size=8, bandwidth=4)
    with pytest.raises(ValueError):
        ModelConfig(freq_kernel=2)
    with pytest.raises(ValueError):
        ModelConfig(sigma_floor=0.0)


def test_risen_softplus_values():
    assert abs(risen_softplus(np.zeros(()), 0.01) - (0.01 + 0.99 * math.log(2))) < 1e-12
    assert risen_softplus(np.full((), -40.0), 0.01) == pytest.approx(0.01, abs=1e-12)
    rng = np.random.default_rng(1)
    out = risen_softplus(rng.standard_normal(100), 0.01)
    assert out.min() > 0.01


def test_predictive_log_density_goldens():
    mu = np.zeros((1, 1, 1), dtype=complex)
    sigma = np.full((1, 1, 1), 1.0 + 1.0j)
    # y = mu: two standard-normal peaks
    assert abs(
        predictive_log_density(mu, Prediction(mu, sigma)) + math.log(2 * math.pi)
    ) < 1e-12
    # doubling sigma lowers log p by (#components) log 2
    lp1 = predictive_log_density(mu, Prediction(mu, sigma))
    lp2 = predictive_log_density(mu, Prediction(mu, 2.0 * sigma))
    assert abs((lp1 - lp2) - 2 * math.log(2)) < 1e-12


def test_predictive_log_density_matches_scalar_loop():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
    mu = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
    sigma = np.abs(rng.standard_normal((3, 2, 4))) + 0.2
    sigma = sigma + 1j * (np.abs(rng.standard_normal((3, 2, 4))) + 0.3)
    got = predictive_log_density(y, Prediction(mu, sigma))
    acc = 0.0
    for idx in np.ndindex(3, 2, 4):
        for part in ("real", "imag"):
            yy = getattr(y[idx], part)
            mm = getattr(mu[idx], part)
            ss = getattr(sigma[idx], part)
            acc += -0.5 * math.log(2 * math.pi) - math.log(ss) - 0.5 * ((yy - mm) / ss) ** 2
    assert abs(got - acc) < 1e-10


# ---------------------------------------------------------------------------
# forward-pass contracts


def test_forward_shapes_and_sigma_floor(micro_model, micro_params):
    task = make_task(np.random.default_rng(3))
    pred, nll = micro_model.forward(task, micro_params)
    assert pred.mu.shape == (task.target_size, 2, MICRO.freq_bins)
    assert pred.sigma.real.min() > MICRO.sigma_floor
    assert pred.sigma.imag.min() > MICRO.sigma_floor
    assert math.isfinite(nll.item())


def test_empty_context_is_well_defined(micro_model, micro_params):
    task = make_task(np.random.default_rng(4), c=0)
    pred, nll = micro_model.forward(task, micro_params)
    assert np.all(np.isfinite(pred.mu.view(float)))
    assert math.isfinite(nll.item())
    # with no context, predictions cannot depend on any context data; two
    # different empty-context tasks at the same targets agree exactly
    other = make_task(np.random.default_rng(5), c=0)
    other.target_locations[:] = task.target_locations
    pred2, _ = micro_model.forward(other, micro_params)
    assert np.array_equal(pred.mu, pred2.mu)
    assert np.array_equal(pred.sigma, pred2.sigma)


def test_forward_rejects_wrong_bins(micro_model, micro_params):
    task = make_task(np.random.default_rng(6), bins=4)
    with pytest.raises(ShapeError):
        micro_model.forward(task, micro_params)


def test_reflection_equivariance_random_params(micro_model):
    # forward(mirror_task(t)) equals ear-swap(forward(t)) for ANY parameters
    for trial in range(5):
        params = init_params(MICRO, np.random.default_rng(100 + trial))
        task = make_task(np.random.default_rng(200 + trial), c=7, t=6)
        base, _ = micro_model.forward(task, params)
        mirrored, _ = micro_model.forward(mirror_task(task), params)
        scale_mu = np.abs(base.mu).max()
        scale_sd = np.abs(base.sigma).max()
        assert np.abs(mirrored.mu - base.mu[:, ::-1]).max() / scale_mu < 1e-5
        assert np.abs(mirrored.sigma - base.sigma[:, ::-1]).max() / scale_sd < 1e-5


def test_context_permutation_bitwise(micro_model, micro_params):
    task = make_task(np.random.default_rng(7), c=9)
    perm = np.random.default_rng(8).permutation(task.context_size)
    shuffled = Task(
        task.context_locations[perm],
        task.context_features[perm],
        task.target_locations,
        task.target_features,
        task.context_indices[perm],
        task.target_indices,
        task.requested_context,
    )
    a, _ = micro_model.forward(task, micro_params)
    b, _ = micro_model.forward(shuffled, micro_params)
    assert np.array_equal(a.mu, b.mu)
    assert np.array_equal(a.sigma, b.sigma)


def test_locality_of_conditioning():
    # with sharp kernels, one distant context point fades toward the
    # empty-context prediction as the target moves away from it
    cfg = ModelConfig(
        grid_size=16,
        bandwidth=7,
        channels=4,
        cnn_blocks=1,
        mlp_blocks=1,
        freq_kernel=3,
        anchors=2,
        freq_bins=3,
    )
    model = SphericalConvCNP(cfg)
    params = init_params(cfg, np.random.default_rng(9))
    sharp = math.log(400.0)
    params["log_beta1"].data[:] = sharp
    params["log_beta2"].data[:] = sharp

    ctx_loc = np.array([[0.0, 0.0, 1.0]])
    ctx_feat = 3.0 * np.ones((1, 2, 3)) + 1.5j
    angles = [0.15, 0.8, math.pi - 0.15]
    targets = np.array([[math.sin(a), 0.0, math.cos(a)] for a in angles])

    def prediction_at(c_loc, c_feat):
        task = Task(
            c_loc,
            c_feat,
            targets,
            np.zeros((3, 2, 3), complex),
            np.arange(len(c_loc)),
            np.arange(len(c_loc), len(c_loc) + 3),
            len(c_loc),
        )
        return model.predict(task, params)

    with_ctx = prediction_at(ctx_loc, ctx_feat)
    empty = prediction_at(np.zeros((0, 3)), np.zeros((0, 2, 3), complex))
    gaps = np.abs(with_ctx.mu - empty.mu).max(axis=(1, 2))
    # monotone decay toward the unconditional prediction; band-limited zonal
    # filters keep a small global tail, so only qualitative convergence holds
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.25 * gaps[0]


def test_gradient_check_micro_config(micro_model, micro_params):
    # end-to-end analytic vs central finite differences on random entries
    rng = np.random.default_rng(10)
    task = make_task(rng, c=5, t=6)
    for p in micro_params.values():
        p.zero_grad()
    _, nll = micro_model.forward(task, micro_params)
    ad.backward(nll)
    h = 1e-5
    names = sorted(micro_params)
    for _ in range(30):
        name = names[rng.integers(len(names))]
        p = micro_params[name]
        idx = rng.integers(p.data.size)
        orig = p.data.reshape(-1)[idx]
        p.data.reshape(-1)[idx] = orig + h
        hi = micro_model.forward(task, micro_params)[1].item()
        p.data.reshape(-1)[idx] = orig - h
        lo = micro_model.forward(task, micro_params)[1].item()
        p.data.reshape(-1)[idx] = orig
        fd = (hi - lo) / (2 * h)
        an = p.grad.reshape(-1)[idx]
        assert abs(an - fd) / max(abs(fd), 1e-6) < 1e-3, name


def test_nll_decreases_under_one_gradient_step(micro_model):
    params = init_params(MICRO, np.random.default_rng(11))
    task = make_task(np.random.default_rng(12), c=4, t=5)
    _, nll = micro_model.forward(task, params)
    before = nll.item()
    ad.backward(nll)
    for p in params.values():
        if p.grad is not None:
            p.data = p.data - 1e-3 * p.grad
    after = micro_model.forward(task, params)[1].item()
    assert after < before


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path, micro_params):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, MICRO, micro_params, extra={"seed": 42})
    cfg, params, sidecar, arrays = load_checkpoint(path)
    assert cfg == MICRO
    assert sidecar["seed"] == 42
    assert not arrays
    for name, p in micro_params.items():
        assert np.array_equal(
            params[name].data, p.data.astype(np.float32).astype(float)
        )


def test_checkpoint_missing_tensor_rejected(tmp_path, micro_params):
    path = tmp_path / "model.ckpt"
    partial = {k: v for k, v in micro_params.items() if k != "head/bias"}
    save_checkpoint(path, MICRO, partial)
    with pytest.raises(ValueError):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# stage-level contracts


def test_first_setconv_empty_and_single_point(micro_model, micro_params):
    from hrtfnp.tasks import Task

    empty = Task(
        np.zeros((0, 3)),
        np.zeros((0, 2, 5), complex),
        np.array([[0.0, 0.0, 1.0]]),
        np.zeros((1, 2, 5), complex),
        np.arange(0),
        np.array([0]),
        0,
    )
    field = micro_model.first_setconv(empty, micro_params)
    assert np.abs(field.data).max() == 0.0

    rng = np.random.default_rng(20)
    loc = unit(rng.standard_normal(3))[None, :]
    feat = (rng.standard_normal((1, 2, 5)) + 1j * rng.standard_normal((1, 2, 5)))
    single = Task(
        loc, feat, -loc, np.zeros((1, 2, 5), complex), np.array([0]), np.array([1]), 1
    )
    field = micro_model.first_setconv(single, micro_params).data  # (8, F, G^2)
    # Nadaraya-Watson of one point: the signal channel is y_c at every node
    assert np.abs(field[2] - feat[0, 0].real[:, None]).max() < 1e-9
    assert np.abs(field[3] - feat[0, 0].imag[:, None]).max() < 1e-9
    # density peaks at the kernel value and never exceeds 1
    assert field[0].max() <= 1.0 + 1e-12
    assert field[1].max() == 0.0  # density is real


def test_first_setconv_mirror_reflects_fields(micro_model, micro_params):
    # mirrored task with swapped ears: left-ear field of the original equals
    # the right-ear field of the mirrored input under grid reflection
    rng = np.random.default_rng(21)
    task = make_task(rng, c=5, t=3)
    mirrored = mirror_task(task)
    f_base = micro_model.first_setconv(task, micro_params).data
    f_mirr = micro_model.first_setconv(mirrored, micro_params).data
    assert np.abs(f_mirr[:4] - f_base[4:]).max() < 1e-12
    assert np.abs(f_mirr[4:] - f_base[:4]).max() < 1e-12


def test_resize_in_zero_field_is_bias_only(micro_model, micro_params):
    from hrtfnp.autodiff import Tensor

    g2 = MICRO.grid_size**2
    zero = Tensor(np.zeros((8, MICRO.freq_bins, g2)))
    out = micro_model.resize_in(zero, micro_params).data
    bias = micro_params["resize/bias"].data
    expect = np.concatenate([bias, bias])[:, None, None]
    assert np.abs(out - expect).max() < 1e-12


def test_second_setconv_constant_and_oracle(micro_model, micro_params):
    from hrtfnp.autodiff import Tensor

    rng = np.random.default_rng(22)
    g2 = MICRO.grid_size**2
    m, f = MICRO.channels, MICRO.freq_bins
    # constant field reads back as the constant at any target
    const = Tensor(np.broadcast_to(np.arange(m, dtype=float)[:, None, None], (m, f, g2)).copy())
    targets = unit(rng.standard_normal((4, 3)))
    q = micro_model.second_setconv(const, targets, micro_params).data
    assert np.abs(q - np.arange(m)[:, None, None]).max() < 1e-9

    # random field matches a direct double-loop Nadaraya-Watson oracle
    z = Tensor(rng.standard_normal((m, f, g2)))
    q = micro_model.second_setconv(z, targets, micro_params).data
    beta2 = float(np.exp(micro_params["log_beta2"].data[0]))
    nodes = micro_model.nodes
    from hrtfnp.sphere import mirror_median

    for ti, x in enumerate(targets):
        for ch in range(m):
            read_at = x if ch < m // 2 else mirror_median(x)
            w = np.exp(-2.0 * beta2 * (1.0 - nodes @ read_at))
            w = w / w.sum()
            for fi in range(f):
                oracle = float(z.data[ch, fi] @ w)
                assert abs(q[ch, fi, ti] - oracle) < 1e-10


def test_second_setconv_localizes_at_large_beta(micro_model, micro_params):
    from hrtfnp.autodiff import Tensor

    params = {k: v for k, v in micro_params.items()}
    sharp = Tensor(np.array([np.log(5e4)]), requires_grad=True)
    params["log_beta2"] = sharp
    rng = np.random.default_rng(23)
    g2 = MICRO.grid_size**2
    z = Tensor(rng.standard_normal((MICRO.channels, MICRO.freq_bins, g2)))
    node_idx = 37
    target = micro_model.nodes[node_idx][None, :]
    q = micro_model.second_setconv(z, target, params).data
    half = MICRO.channels // 2
    # left channels converge to the field value at the queried node
    assert np.abs(q[:half, :, 0] - z.data[:half, :, node_idx]).max() < 1e-6
