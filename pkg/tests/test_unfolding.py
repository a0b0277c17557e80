import numpy as np
import pytest
import torch

from irsfd import unfolding as uf
from irsfd.channels import effective_channels, sample_full_csi
from irsfd.linalg import NumericalError
from irsfd.numdiff import central_diff
from irsfd.rates import sum_rate, weighted_sum_rate
from irsfd.scenario import unit_scenario
from irsfd.ssca import sample_gradient
from irsfd.wmmse import BcdConfig, run_bcd


@pytest.fixture(scope="module")
def tiny():
    return unit_scenario(N=4, T=8, M=2, D=1, K=1, L=1)


@pytest.fixture(scope="module")
def tiny_pool(tiny):
    rng = np.random.default_rng(3)
    return [sample_full_csi(tiny, rng) for _ in range(3)]


@pytest.fixture(scope="module")
def tiny_net(tiny, tiny_pool):
    return uf.init_params(tiny, layers=2, rng=np.random.default_rng(3),
                          probe=tiny_pool[:2])


# ---------------------------------------------------------------------------
# dagger / inverse surrogate
# ---------------------------------------------------------------------------

def test_dagger_three_by_three(rng):
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    d = uf.dagger(a)
    for i in range(3):
        for j in range(3):
            expect = 1.0 / a[i, i] if i == j else 0.0
            assert d[i, j] == pytest.approx(expect)


def test_dagger_exact_on_diagonal():
    a = np.diag([2.0, -1.0 + 1j, 0.5]).astype(complex)
    assert np.allclose(uf.dagger(a), np.linalg.inv(a))


def test_dagger_reciprocal_involution(rng):
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    np.fill_diagonal(a, np.diag(a) + 3.0)
    twice = uf.dagger(uf.dagger(a))
    assert np.allclose(np.diag(twice), np.diag(a))


def test_dagger_rejects_zero_diagonal():
    a = np.eye(3, dtype=complex)
    a[1, 1] = 0.0
    with pytest.raises(NumericalError):
        uf.dagger(a)


def test_inverse_approx_identity_branch():
    a = np.diag([4.0, 2.0]).astype(complex)
    out = uf.inverse_approx(a, np.eye(2, dtype=complex),
                            np.zeros((2, 2), dtype=complex),
                            np.zeros((2, 2), dtype=complex))
    assert np.allclose(out, np.linalg.inv(a))


def test_inverse_approx_taylor_identity(rng):
    # Y = -A0^{-1} A0^{-1}, Z = 2 A0^{-1} reproduces the first-order
    # expansion of the inverse, exact at A = A0
    g = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    a0 = g @ g.conj().T + 3 * np.eye(3)
    inv0 = np.linalg.inv(a0)
    out = uf.inverse_approx(a0, np.zeros((3, 3), dtype=complex),
                            -inv0 @ inv0, 2 * inv0)
    assert np.allclose(out, inv0, atol=1e-12)


def test_inverse_approx_diagonally_dominant(rng):
    # row dominance ratio 10: each row's diagonal is 10x the absolute sum
    # of its off-diagonal entries
    n = 6
    off = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    np.fill_diagonal(off, 0)
    row_sums = np.sum(np.abs(off), axis=1)
    a = off + np.diag(10.0 * row_sums).astype(complex)
    approx = uf.inverse_approx(a, np.eye(n, dtype=complex),
                               np.zeros((n, n), dtype=complex),
                               np.zeros((n, n), dtype=complex))
    exact = np.linalg.inv(a)
    assert np.linalg.norm(approx - exact) / np.linalg.norm(exact) < 0.2


def test_torch_dagger_matches_numpy(rng):
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    t = uf._tdagger(torch.from_numpy(a).unsqueeze(0), "test")[0].numpy()
    assert np.allclose(t, uf.dagger(a))


# ---------------------------------------------------------------------------
# identity-init layer versus exact update, dominance sweep
# ---------------------------------------------------------------------------

def _dominance_instance(scen, gain, seed=0):
    """Channel scaling makes the receive covariances noise-dominated;
    smaller gain means stronger diagonal dominance."""
    rng = np.random.default_rng(seed)
    csi = sample_full_csi(scen, rng).map(lambda h: gain * h)
    theta = rng.uniform(0, 2 * np.pi, scen.T)
    eff = effective_channels(csi, theta)
    from irsfd.wmmse import random_beamformers
    bf = random_beamformers(scen, rng)
    return eff, bf


def calibrated_dominance_errors(scen, targets, seed=0):
    """Worst per-family error at instances whose weakest dominance ratio is
    calibrated (by channel-gain bisection) to each target."""
    out = []
    for target in targets:
        lo, hi = 1e-5, 10.0
        best = None
        for _ in range(50):
            gain = np.sqrt(lo * hi)
            eff, bf = _dominance_instance(scen, gain, seed)
            errs, r = uf.layer_vs_exact_errors(eff, bf, scen)
            if r > target:
                lo = gain
            else:
                hi = gain
            best = (errs, r)
            if abs(r - target) / target < 0.05:
                break
        out.append((max(best[0].values()), best[1]))
    return out


def test_identity_layer_tracks_exact_update(unit):
    results = calibrated_dominance_errors(unit, (2.0, 10.0, 100.0))
    errors = [e for e, _ in results]
    assert errors[0] <= 0.25
    assert errors[0] > errors[1] > errors[2]


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def test_lpbn_forward_matches_numpy(tiny, tiny_pool, tiny_net):
    lpbn, _ = tiny_net
    theta = lpbn.theta_numpy()
    tcsi = uf.TorchCsi.from_list(tiny_pool[:1])
    teff = uf.lpbn_forward(tcsi, lpbn.theta.detach())
    eff = effective_channels(tiny_pool[0], theta)
    assert np.allclose(teff.Hbar_U[0][0].numpy(), eff.Hbar_U[0])
    assert np.allclose(teff.Hbar_D[0][0].numpy(), eff.Hbar_D[0])
    assert np.allclose(teff.Jbar[0][0][0].numpy(), eff.Jbar[0][0])


def test_lpbn_unit_modulus(tiny_net):
    lpbn, _ = tiny_net
    with torch.no_grad():
        phi = torch.polar(torch.ones_like(lpbn.theta), lpbn.theta)
    assert float((phi.abs() - 1).abs().max()) < 1e-14


def test_sabn_forward_feasible_any_params(tiny, tiny_pool):
    rng = np.random.default_rng(9)
    lpbn, sabn = uf.init_params(tiny, layers=2, rng=rng, probe=tiny_pool[:2])
    with torch.no_grad():  # random parameter values, not just identity init
        for _, t in sabn.named_parameters():
            if t.is_complex():
                t.add_(torch.from_numpy(
                    0.3 * (rng.standard_normal(tuple(t.shape))
                           + 1j * rng.standard_normal(tuple(t.shape)))))
    eff = effective_channels(tiny_pool[0], lpbn.theta_numpy())
    bf = uf.sabn_forward(eff, sabn, tiny)
    assert bf.is_feasible(tiny)
    assert bf.dl_power() <= tiny.P_AP * (1 + 1e-9)


def test_sabn_zero_init_offset_path(tiny, tiny_pool, tiny_net):
    # with zero input beamformers, the first-layer receive filter is
    # exactly the learnable offset
    _, sabn = tiny_net
    layer = sabn.layers[0]
    with torch.no_grad():
        layer.O_uu[0].fill_(0.5 + 0.25j)
    tcsi = uf.TorchCsi.from_list(tiny_pool[:1])
    teff = uf.lpbn_forward(tcsi, torch.zeros(tiny.T, dtype=torch.float64))
    neff = uf._dimensionless(teff, tiny)
    P0 = [torch.zeros((1, tiny.M_U[0], tiny.D_U[0]), dtype=torch.complex128)]
    F0 = [torch.zeros((1, tiny.Nt, tiny.D_D[0]), dtype=torch.complex128)]
    a_ul = uf._t_ul_cov(neff, P0, F0, tiny, noise_ul=1.0)
    inv = uf._tinv_approx(a_ul, layer.X_uu[0], layer.Y_uu[0], layer.Z_uu[0],
                          "t", sabn.scales["uu"])
    u = inv @ (neff.Hbar_U[0] @ P0[0]) + layer.O_uu[0]
    assert float(u.abs().max()) > 0
    assert torch.allclose(u[0], layer.O_uu[0])
    with torch.no_grad():
        layer.O_uu[0].zero_()


def test_exact_output_layer_matches_bcd_iteration(tiny, tiny_pool, tiny_net):
    lpbn, _ = tiny_net
    theta = lpbn.theta_numpy()
    init = uf.canonical_init_beamformers(tiny)
    eff_np = effective_channels(tiny_pool[0], theta)
    bfe, _, _ = run_bcd(eff_np, tiny, BcdConfig(max_iters=1, tol=1e-12), init=init)
    tcsi = uf.TorchCsi.from_list(tiny_pool[:1])
    teff = uf.lpbn_forward(tcsi, lpbn.theta.detach())
    with torch.no_grad():
        P = [torch.from_numpy(p).unsqueeze(0) for p in init.P]
        F = [torch.from_numpy(f).unsqueeze(0) for f in init.F]
        Pt, Ft = uf._exact_bcd_layer(teff, P, F, tiny)
    assert np.abs(Pt[0][0].numpy() - bfe.P[0]).max() < 1e-7
    assert np.abs(Ft[0][0].numpy() - bfe.F[0]).max() < 1e-7


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_backward_matches_finite_differences_sampled(tiny, tiny_pool, tiny_net):
    lpbn, sabn = tiny_net
    batch = tiny_pool[:2]
    _, theta_grad, grads = uf.backward(lpbn, sabn, batch, tiny)
    rng = np.random.default_rng(0)
    h = 1e-5
    # all phase coordinates
    for i in range(tiny.T):
        with torch.no_grad():
            lpbn.theta[i] += h
        up = uf.loss(lpbn, sabn, batch, tiny)
        with torch.no_grad():
            lpbn.theta[i] -= 2 * h
        dn = uf.loss(lpbn, sabn, batch, tiny)
        with torch.no_grad():
            lpbn.theta[i] += h
        fd = (up - dn) / (2 * h)
        assert abs(fd - theta_grad[i]) / (abs(fd) + abs(theta_grad[i]) + 1e-8) < 1e-4
    # a sample of network parameters (real and imaginary parts)
    names = [n for n, _ in sabn.named_parameters()]
    tensors = dict(sabn.named_parameters())
    for name in rng.choice(names, size=8, replace=False):
        t = tensors[name]
        flat = t.detach().reshape(-1)
        idx = int(rng.integers(flat.numel()))
        for part in (1.0, 1.0j) if t.is_complex() else (1.0,):
            with torch.no_grad():
                t.reshape(-1)[idx] += part * h
            up = uf.loss(lpbn, sabn, batch, tiny)
            with torch.no_grad():
                t.reshape(-1)[idx] -= 2 * part * h
            dn = uf.loss(lpbn, sabn, batch, tiny)
            with torch.no_grad():
                t.reshape(-1)[idx] += part * h
            fd = (up - dn) / (2 * h)
            g = grads[name].reshape(-1)[idx]
            ad = g.imag if part == 1.0j else (g.real if np.iscomplexobj(g) else g)
            assert abs(fd - ad) / (abs(fd) + abs(ad) + 1e-8) < 1e-4, name


def test_frozen_theta_gradient_equals_ssca(tiny, tiny_pool, tiny_net):
    lpbn, sabn = tiny_net
    csi = tiny_pool[0]
    frozen = uf.theta_gradient_frozen(lpbn, sabn, csi, tiny)
    theta = lpbn.theta_numpy()
    _, bf = uf.network_beamformers(csi, lpbn, sabn, tiny)
    ours = sample_gradient(theta, csi, bf, tiny)
    assert np.abs(frozen - ours).max() < 1e-6


def test_backward_weight_linearity(tiny, tiny_pool, tiny_net):
    # the sum-rate (and so the loss) is linear in the user weights at
    # fixed beamformers
    lpbn, sabn = tiny_net
    csi = tiny_pool[0]
    theta = lpbn.theta_numpy()
    _, bf = uf.network_beamformers(csi, lpbn, sabn, tiny)
    base = weighted_sum_rate(theta, bf, csi, tiny)
    doubled = tiny.replace(alpha=(2 * tiny.alpha[0],))
    up = weighted_sum_rate(theta, bf, csi, doubled)
    from irsfd.rates import uplink_rate
    eff = effective_channels(csi, theta)
    assert up - base == pytest.approx(tiny.alpha[0] * uplink_rate(eff, bf, tiny, 0),
                                      rel=1e-9)


# ---------------------------------------------------------------------------
# training, checkpoints
# ---------------------------------------------------------------------------

def test_init_params_deterministic(tiny, tiny_pool):
    a = uf.init_params(tiny, 2, np.random.default_rng(5), probe=tiny_pool[:1])
    b = uf.init_params(tiny, 2, np.random.default_rng(5), probe=tiny_pool[:1])
    assert np.array_equal(a[0].theta_numpy(), b[0].theta_numpy())
    for (_, ta), (_, tb) in zip(a[1].named_parameters(), b[1].named_parameters()):
        assert torch.equal(ta, tb)
    assert a[1].scales == b[1].scales


def test_init_params_multipliers_positive(tiny_net):
    _, sabn = tiny_net
    for layer in sabn.layers:
        assert float(layer.lam.min()) > 0
        assert float(layer.mu) > 0


def test_train_zero_movement_at_tiny_lr(tiny, tiny_pool):
    cfg = uf.TrainConfig(lr=1e-300, epochs=1, batch=2, seed=0, eval_every=1,
                         keep_best=False, init_mode="identity")
    lpbn, sabn, _ = uf.train(tiny_pool, tiny, cfg, layers=1)
    ref_lpbn, ref_sabn = uf.init_params(tiny, 1, np.random.default_rng(0),
                                        probe=tiny_pool[:3])
    for (_, t), (_, r) in zip(sabn.named_parameters(), ref_sabn.named_parameters()):
        assert float((t - r).abs().max()) < 1e-12


def test_train_improves_holdout(tiny, tiny_pool):
    rng = np.random.default_rng(8)
    pool = [sample_full_csi(tiny, rng) for _ in range(20)]
    hold = [sample_full_csi(tiny, rng) for _ in range(4)]
    cfg = uf.TrainConfig(epochs=10, batch=5, seed=0, theta_mode="ssca",
                         eval_every=4)
    lpbn, sabn, trace = uf.train(pool, tiny, cfg, layers=2, holdout=hold)
    assert max(trace.holdout_rate) >= trace.holdout_rate[0]
    assert np.isfinite(trace.loss).all()


def test_train_trace_csv(tiny, tiny_pool, tmp_path):
    cfg = uf.TrainConfig(epochs=2, batch=3, seed=0, eval_every=1)
    _, _, trace = uf.train(tiny_pool, tiny, cfg, layers=1, holdout=tiny_pool[:1])
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    assert path.read_text().startswith("step,loss,holdout_sum_rate")


def test_checkpoint_round_trip(tiny, tiny_pool, tiny_net, tmp_path):
    lpbn, sabn = tiny_net
    path = tmp_path / "ckpt.npz"
    uf.save_checkpoint(path, lpbn, sabn, tiny)
    lpbn2, sabn2 = uf.load_checkpoint(path, tiny)
    assert np.allclose(lpbn.theta_numpy(), lpbn2.theta_numpy())
    assert sabn.scales == pytest.approx(sabn2.scales)
    eff = effective_channels(tiny_pool[0], lpbn.theta_numpy())
    a = uf.sabn_forward(eff, sabn, tiny)
    b = uf.sabn_forward(eff, sabn2, tiny)
    assert np.allclose(a.P[0], b.P[0])
    assert np.allclose(a.F[0], b.F[0])


def test_checkpoint_dimension_mismatch(tiny, tiny_net, tmp_path):
    lpbn, sabn = tiny_net
    path = tmp_path / "ckpt.npz"
    uf.save_checkpoint(path, lpbn, sabn, tiny)
    other = unit_scenario(N=4, T=4, M=2, D=1, K=1, L=1)
    with pytest.raises(ValueError):
        uf.load_checkpoint(path, other)


def test_train_config_validation():
    with pytest.raises(ValueError):
        uf.TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        uf.TrainConfig(theta_mode="adamw")
    with pytest.raises(ValueError):
        uf.TrainConfig(init_mode="zeros")
