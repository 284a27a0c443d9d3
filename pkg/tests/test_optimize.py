import numpy as np
import pytest
from conftest import random_state
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hbhlab.ansatz import Network, NetworkConfig, full_state_vector
from hbhlab.errors import DegenerateSample, IllConditionedBatch, NormalizationError
from hbhlab.exact import lowest_eigenpairs
from hbhlab.hamiltonian import hbh_hamiltonian
from hbhlab.hilbert import LatticeShape
from hbhlab.optimize import (
    LOSS_CAP,
    SGD,
    Adam,
    EnergyObjective,
    OverlapObjective,
    StepRecord,
    TrainConfig,
    TrainHistory,
    best_dtau,
    curriculum_train,
    energy,
    energy_cotangent,
    energy_gradient,
    exact_sample,
    local_energies,
    local_energy,
    mse_cotangent,
    mse_loss,
    newton_refine,
    overlap_cotangent,
    overlap_gradient,
    overlap_loss,
    site_target,
    sr_direction,
    sr_step,
    train_site,
    train_supervised,
)

SHAPE = LatticeShape(3, 3)


@pytest.fixture(scope="module")
def h33():
    return hbh_hamiltonian(SHAPE, 2, 0.3)


def f64net(arch="mlp", field="real", enc="plusminus", seed=0, width=4):
    return Network(NetworkConfig(arch, 2, width, field, enc, "f64", seed), SHAPE)


def jiggle(net, seed=1, scale=0.3):
    rng = np.random.default_rng(seed)
    return net.with_real_params(net.real_params + scale * rng.standard_normal(net.n_real))


def fd_grad(f, theta, step=1e-5):
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        g[k] = (f(theta + e) - f(theta - e)) / (2 * step)
    return g


def uniform_net(shape, seed=0):
    """Network whose output head is zero, hence a uniform wave function."""
    net = Network(NetworkConfig(precision="f64", seed=seed), shape)
    p = net.params.copy()
    p[-net.layers[-1].n_in * 2 :] = 0
    return net.with_params(p)


# ---------------------------------------------------------------------------
# sampling


def test_sample_basis_vector():
    psi = np.zeros(10)
    psi[7] = 1.0
    assert np.all(exact_sample(psi, 1000, 0) == 7)


def test_sample_uniform_within_4_sigma():
    d, n = 20, 100_000
    idx = exact_sample(np.full(d, 1 / np.sqrt(d)), n, 1)
    counts = np.bincount(idx, minlength=d)
    p = 1 / d
    assert np.all(np.abs(counts - n * p) <= 4 * np.sqrt(n * p * (1 - p)))


def test_sample_rejects_unnormalized():
    with pytest.raises(NormalizationError):
        exact_sample(np.ones(4), 10, 0)


def test_sample_chi_square_ground_state(ref45):
    psi = ref45[0.3][1].ground_state
    n = 1_000_000
    counts = np.bincount(exact_sample(psi, n, 2024), minlength=psi.size)
    expected = n * np.abs(psi) ** 2
    # pool cells with small expectation so the chi-square approximation holds
    order = np.argsort(expected)
    cum = np.cumsum(expected[order])
    small = order[cum < 5 * 50]
    keep = np.setdiff1d(np.arange(psi.size), small)
    obs = np.append(counts[keep], counts[small].sum())
    exp = np.append(expected[keep], expected[small].sum())
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01


# ---------------------------------------------------------------------------
# local energies and energy gradient


def test_local_energy_eigenvector(h33):
    r = lowest_eigenpairs(h33, k=1)
    for s in (0, 5, 20):
        assert abs(local_energy(h33, r.ground_state, s) - r.ground_energy) < 1e-10


def test_local_energy_uniform_zero_flux():
    h = hbh_hamiltonian(SHAPE, 2, 0.0)
    u = np.ones(h.dim)
    rowsum = np.asarray(h.matrix.sum(axis=1)).ravel()
    assert np.allclose([local_energy(h, u, s) for s in range(h.dim)], rowsum, atol=1e-12)


def test_local_energy_average_is_energy(h33):
    net = jiggle(f64net())
    psi = full_state_vector(net, h33.basis)
    h_loc, ok = local_energies(h33, psi, np.arange(h33.dim))
    assert ok.all()
    assert abs(np.sum(np.abs(psi) ** 2 * h_loc) - np.vdot(psi, h33.to_dense() @ psi)) < 1e-10
    # the network lookup agrees with the vector lookup
    for s in (0, 11, 35):
        assert abs(local_energy(h33, net, s) - h_loc[s]) < 1e-10


def test_local_energy_degenerate_sample(h33):
    psi = np.ones(h33.dim)
    psi[3] = 0.0
    with pytest.raises(DegenerateSample):
        local_energy(h33, psi, 3)
    _, ok = local_energies(h33, psi / np.linalg.norm(psi), np.array([3, 4]))
    assert list(ok) == [False, True]


def test_energy_gradient_zero_at_eigenvector():
    h = hbh_hamiltonian(LatticeShape(2, 2), 1, 0.0)
    net = uniform_net(LatticeShape(2, 2))
    psi = full_state_vector(net, h.basis)
    h_loc, _ = local_energies(h, psi, np.arange(4))
    o = net.jacobian(h.basis.occupations)
    assert np.allclose(energy_gradient(h_loc, o, np.abs(psi) ** 2), 0, atol=1e-12)
    with pytest.raises(ValueError):
        energy_gradient(np.zeros(0), np.zeros((0, 3)))


@pytest.mark.parametrize(
    "arch,field,enc",
    [("mlp", "real", "plusminus"), ("mlp", "complex", "fourier"), ("cnn", "real", "patches"), ("cnn", "complex", "embeddings"), ("mlp", "real", "embeddings")],
)
def test_energy_gradient_full_basis_matches_fd(h33, arch, field, enc):
    net = jiggle(f64net(arch, field, enc))
    obj = EnergyObjective(net, h33.basis, h33)
    theta = net.real_params
    g = obj.grad(theta)
    fd = fd_grad(obj.value, theta)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6
    # the explicit O-row form gives the same vector
    psi = obj.vector(theta)
    h_loc, _ = local_energies(h33, psi, np.arange(h33.dim))
    o = net.jacobian(h33.basis.occupations)
    assert np.allclose(energy_gradient(h_loc, o, np.abs(psi) ** 2), g, atol=1e-10)


def test_energy_gradient_batch_converges(h33):
    net = jiggle(f64net())
    psi = full_state_vector(net, h33.basis)
    full = EnergyObjective(net, h33.basis, h33).grad()
    h_psi = h33.apply(psi)
    o_all = net.jacobian(h33.basis.occupations)
    rng = np.random.default_rng(5)
    sizes = [64, 256, 1024, 4096]
    errs = []
    for b in sizes:
        e = []
        for _ in range(40):
            idx = exact_sample(psi, b, rng)
            h_loc, _ = local_energies(h33, psi, idx, h_psi)
            e.append(np.linalg.norm(energy_gradient(h_loc, o_all[idx]) - full))
        errs.append(np.sqrt(np.mean(np.square(e))))
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.7 < slope < -0.3


# ---------------------------------------------------------------------------
# SR


def test_sr_step_at_eigenvector_is_stationary():
    h = hbh_hamiltonian(LatticeShape(2, 2), 1, 0.0)
    net = uniform_net(LatticeShape(2, 2))
    new, rec = sr_step(net, h, TrainConfig(method="sr", batch_size=64), Adam(1e-2), np.random.default_rng(0))
    assert np.array_equal(new.params, net.params)
    assert rec.energy == pytest.approx(-2.0, abs=1e-12)


def test_sr_with_identity_metric_is_plain_descent():
    rng = np.random.default_rng(0)
    g = rng.normal(size=7)
    o = np.zeros((5, 7), dtype=complex)  # S = 0, so S + shift*I = shift*I
    delta = sr_direction(o, g, 1.0)
    assert np.allclose(delta, g)
    theta = rng.normal(size=7)
    assert np.allclose(SGD(0.1).step(theta, delta), theta - 0.1 * g)


@pytest.mark.parametrize("batch", [3, 40])  # Woodbury and direct branches
def test_sr_direction_solves_system(batch):
    rng = np.random.default_rng(batch)
    o = rng.normal(size=(batch, 12)) + 1j * rng.normal(size=(batch, 12))
    w = rng.random(batch)
    w /= w.sum()
    g = rng.normal(size=12)
    oc = o - w @ o
    s = np.real(oc.conj().T @ (w[:, None] * oc))
    delta = sr_direction(o, g, 0.05, w)
    assert np.allclose((s + 0.05 * np.eye(12)) @ delta, g, atol=1e-10)


@pytest.mark.parametrize("batch", [3, 40])
def test_sr_direction_single_precision(batch):
    rng = np.random.default_rng(batch)
    o = rng.normal(size=(batch, 12)) + 1j * rng.normal(size=(batch, 12))
    g = rng.normal(size=12)
    d64 = sr_direction(o, g, 0.05)
    d32 = sr_direction(o, g, 0.05, dtype=np.float32)
    assert d32.dtype == np.float64
    assert np.linalg.norm(d32 - d64) / np.linalg.norm(d64) < 1e-4


def test_sr_large_shift_approaches_gradient_direction():
    rng = np.random.default_rng(1)
    o = rng.normal(size=(30, 10)) + 1j * rng.normal(size=(30, 10))
    g = rng.normal(size=10)
    cos = []
    for shift in (1e-2, 1.0, 1e2, 1e4):
        d = sr_direction(o, g, shift)
        cos.append(d @ g / np.linalg.norm(d) / np.linalg.norm(g))
    assert all(b >= a - 1e-12 for a, b in zip(cos, cos[1:]))
    assert cos[-1] > 1 - 1e-6


# ---------------------------------------------------------------------------
# SITE


def test_site_target_examples(h33, rng):
    r = lowest_eigenpairs(h33)
    t = site_target(r.ground_state, h33, 0.05)
    assert abs(abs(np.vdot(t, r.ground_state)) - 1) < 1e-12
    psi = random_state(rng, h33.dim)
    assert energy(site_target(psi, h33, 1e-2), h33) <= energy(psi, h33)
    d = [np.linalg.norm(site_target(psi, h33, dt) - psi) for dt in (1e-2, 1e-4, 1e-6)]
    assert d[0] > d[1] > d[2] and d[2] < 1e-5
    with pytest.raises(ValueError):
        site_target(psi, h33, 0.0)


def test_best_dtau_picks_lowest_energy(h33, rng):
    psi = random_state(rng, h33.dim)
    dt, t, e = best_dtau(psi, h33)
    assert all(e <= energy(site_target(psi, h33, x), h33) for x in (1e-3, 3e-3, 1e-2, 3e-2, 1e-1))


def test_site_eigenvector_initialization_converges_immediately():
    h = hbh_hamiltonian(LatticeShape(2, 2), 1, 0.0)
    net = uniform_net(LatticeShape(2, 2))
    best, hist = train_site(net, h, TrainConfig(method="site", max_steps=50, batch_size=16))
    assert hist.extra["inner_steps"] == []
    assert np.array_equal(best.params, net.params)
    assert any("converged" in f for f in hist.flags)


def test_site_exhaustive_inner_loop_monotone(h33):
    """Full-basis overlap descent towards a fixed SITE target with a small step."""
    for seed in range(3):
        net = jiggle(f64net(seed=seed), seed=seed)
        psi = full_state_vector(net, h33.basis)
        _, target, _ = best_dtau(psi, h33)
        obj = OverlapObjective(net, h33.basis, target)
        theta = net.real_params
        losses = [obj.value(theta)]
        for _ in range(20):
            theta = theta - 1e-2 * obj.grad(theta)
            losses.append(obj.value(theta))
        assert all(b < a for a, b in zip(losses, losses[1:]))


# ---------------------------------------------------------------------------
# overlap loss and gradient


def test_overlap_loss_examples(rng):
    a = random_state(rng, 10)
    assert overlap_loss(a, a) == pytest.approx(0.0, abs=1e-14)
    e = np.eye(3)
    val, flag = overlap_loss(e[0], e[1], return_flag=True)
    assert val == LOSS_CAP and flag
    with pytest.raises(ValueError):
        overlap_loss(np.zeros(3), e[0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 2 * np.pi), st.floats(0.01, 100), st.floats(0, 2 * np.pi), st.floats(0.01, 100))
def test_overlap_loss_gauge_invariance(seed, phi, c, phi2, c2):
    rng = np.random.default_rng(seed)
    a, b = random_state(rng, 12), random_state(rng, 12)
    base = overlap_loss(a, b)
    assert base >= 0
    assert overlap_loss(c * np.exp(1j * phi) * a, c2 * np.exp(1j * phi2) * b) == pytest.approx(base, rel=1e-10, abs=1e-12)
    assert overlap_loss(c * np.exp(1j * phi) * b, b) == pytest.approx(0.0, abs=1e-12)


def test_overlap_gradient_zero_when_proportional(h33):
    net = jiggle(f64net())
    psi = full_state_vector(net, h33.basis)
    target = 2.5j * psi
    g = OverlapObjective(net, h33.basis, target / np.linalg.norm(target)).grad()
    assert np.allclose(g, 0, atol=1e-12)
    idx = np.arange(h33.dim)
    gb = overlap_gradient(net, target, h33.basis.occupations[idx], idx, np.abs(psi) ** 2)
    assert np.allclose(gb, 0, atol=1e-12)


def test_overlap_cotangent_ill_conditioned():
    with pytest.raises(IllConditionedBatch):
        overlap_cotangent(np.array([1.0, -1.0]))


@pytest.mark.parametrize(
    "arch,field,enc",
    [("mlp", "real", "plusminus"), ("mlp", "complex", "patches"), ("cnn", "real", "fourier"), ("cnn", "complex", "plusminus"), ("cnn", "real", "embeddings")],
)
@pytest.mark.parametrize("mode", ["full", "norm_only", "phase_only"])
def test_overlap_gradient_full_basis_matches_fd(h33, arch, field, enc, mode):
    target = lowest_eigenpairs(h33).ground_state
    net = jiggle(f64net(arch, field, enc))
    obj = OverlapObjective(net, h33.basis, target, mode)
    theta = net.real_params
    fd = fd_grad(obj.value, theta)
    assert np.linalg.norm(obj.grad(theta) - fd) / np.linalg.norm(fd) < 1e-6


def test_overlap_gradient_invariant_to_target_gauge(h33):
    target = lowest_eigenpairs(h33).ground_state
    net = jiggle(f64net())
    g1 = OverlapObjective(net, h33.basis, target).grad()
    g2 = OverlapObjective(net, h33.basis, np.exp(0.7j) * target).grad()
    assert np.allclose(g1, g2, atol=1e-12)
    idx = exact_sample(full_state_vector(net, h33.basis), 64, 0)
    occ = h33.basis.occupations[idx]
    b1 = overlap_gradient(net, target, occ, idx)
    b2 = overlap_gradient(net, 3.0 * np.exp(-1.1j) * target, occ, idx)
    assert np.allclose(b1, b2, atol=1e-12)


def test_overlap_descent_step_reduces_loss(h33):
    target = lowest_eigenpairs(h33).ground_state
    for seed in range(3):
        net = jiggle(f64net(seed=seed), seed=seed)
        obj = OverlapObjective(net, h33.basis, target)
        theta = net.real_params
        assert obj.value(theta - 1e-3 * obj.grad(theta)) < obj.value(theta)


# ---------------------------------------------------------------------------
# MSE


def test_mse_identical_is_zero(rng):
    a = random_state(rng, 20)
    loss, cot = mse_cotangent(a, a * np.exp(0.4j))
    assert loss == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(cot, 0, atol=1e-14)


def test_mse_loss_batch(h33):
    target = lowest_eigenpairs(h33).ground_state
    net = jiggle(f64net())
    idx = np.arange(h33.dim)
    loss, g = mse_loss(net, h33.basis, target, idx)
    assert loss > 0 and g.shape == (net.n_real,) and np.all(np.isfinite(g))


# ---------------------------------------------------------------------------
# trainers


def test_supervised_self_target_stays_put(h33):
    net = Network(NetworkConfig(precision="f64", seed=4), SHAPE)
    target = full_state_vector(net, h33.basis)
    best, hist = train_supervised(net, h33.basis, target, TrainConfig(max_steps=20, eval_interval=5), h33)
    assert hist.records[0].deviation < 1e-12
    assert hist.best_step == 0 and hist.best_loss < 1e-12


def test_supervised_reduces_deviation(h33):
    target = lowest_eigenpairs(h33).ground_state
    net = Network(NetworkConfig(width=16, seed=0), SHAPE)
    best, hist = train_supervised(net, h33.basis, target, TrainConfig(max_steps=300, eval_interval=50, learning_rate=3e-3), h33)
    dev = hist.column("deviation")
    assert dev[-1] < dev[0] / 5
    assert np.all(np.diff(hist.column("step")) > 0)


@pytest.mark.parametrize("mode", ["norm_only", "phase_only"])
def test_supervised_substitution_modes(h33, mode):
    target = lowest_eigenpairs(h33).ground_state
    net = Network(NetworkConfig(width=16, seed=0), SHAPE)
    best, hist = train_supervised(net, h33.basis, target, TrainConfig(max_steps=200, eval_interval=50, learning_rate=3e-3, target_mode=mode), h33)
    assert hist.best_loss < hist.records[0].loss


def test_supervised_mse_runs(h33):
    target = lowest_eigenpairs(h33).ground_state
    net = Network(NetworkConfig(width=16, seed=0), SHAPE)
    cfg = TrainConfig(max_steps=200, eval_interval=50, learning_rate=3e-3, loss_kind="mse")
    best, hist = train_supervised(net, h33.basis, target, cfg, h33)
    assert hist.best_loss < hist.records[0].loss


def test_supervised_rejects_bad_target(h33):
    net = Network(NetworkConfig(), SHAPE)
    with pytest.raises(NormalizationError):
        train_supervised(net, h33.basis, np.ones(h33.dim), TrainConfig(max_steps=1))
    with pytest.raises(ValueError):
        train_supervised(net, h33.basis, np.ones(3) / np.sqrt(3), TrainConfig(max_steps=1))


def test_seeded_determinism(h33):
    target = lowest_eigenpairs(h33).ground_state
    cfg = TrainConfig(max_steps=60, eval_interval=10, seed=11)
    runs = [train_supervised(Network(NetworkConfig(seed=2), SHAPE), h33.basis, target, cfg, h33) for _ in range(2)]
    assert [vars(r) for r in runs[0][1].records] == [vars(r) for r in runs[1][1].records]
    assert np.array_equal(runs[0][0].params, runs[1][0].params)


def test_curriculum_single_point_equals_supervised(h33):
    target = lowest_eigenpairs(h33).ground_state
    cfg = TrainConfig(max_steps=40, eval_interval=10, seed=3)
    net = Network(NetworkConfig(seed=1), SHAPE)
    a, _ = train_supervised(net, h33.basis, target, cfg)
    b, hist = curriculum_train(net, h33.basis, [0.3], cfg, lambda al: target)
    assert np.array_equal(a.params, b.params)
    assert hist.extra["target_overlap"] == []
    with pytest.raises(ValueError):
        curriculum_train(net, h33.basis, [0.3, 0.1], cfg, lambda al: target)


def test_curriculum_tracks_target_overlaps():
    shape = LatticeShape(3, 3)
    refs = {a: lowest_eigenpairs(hbh_hamiltonian(shape, 2, a)).ground_state for a in (0.0, 0.15, 0.3)}
    net = Network(NetworkConfig(width=8), shape)
    basis = hbh_hamiltonian(shape, 2, 0.0).basis
    _, hist = curriculum_train(net, basis, [0.0, 0.15, 0.3], TrainConfig(max_steps=30), refs.__getitem__)
    ov = hist.extra["target_overlap"]
    assert len(ov) == 2 and all(0 <= x <= 1 + 1e-12 for x in ov)
    assert ov[0] == pytest.approx(abs(np.vdot(refs[0.0], refs[0.15])))


def test_history_jsonl_roundtrip(tmp_path):
    h = TrainHistory()
    h.append(StepRecord(0, 1.0, -2.0, 0.5))
    h.append(StepRecord(10, 0.5, None, None))
    h.save_jsonl(tmp_path / "h.jsonl")
    back = TrainHistory.load_jsonl(tmp_path / "h.jsonl")
    assert [vars(r) for r in back.records] == [vars(r) for r in h.records]
    with pytest.raises(ValueError):
        h.append(StepRecord(5, 0.1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(method="dmrg")


# ---------------------------------------------------------------------------
# Newton


def test_newton_quadratic_one_step():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 6))
    a = m @ m.T + np.eye(6)
    b = rng.normal(size=6)
    f = lambda x: 0.5 * x @ a @ x - b @ x  # noqa: E731
    g = lambda x: a @ x - b  # noqa: E731
    res = newton_refine(f, g, np.zeros(6), max_iters=3)
    assert np.allclose(res.theta, np.linalg.solve(a, b), atol=1e-8)
    assert res.grad_norms[1] < 1e-8


def test_newton_non_convex_is_damped():
    f = lambda x: x[0] ** 4 - x[0] ** 2 + x[1] ** 2  # noqa: E731
    g = lambda x: np.array([4 * x[0] ** 3 - 2 * x[0], 2 * x[1]])  # noqa: E731
    res = newton_refine(f, g, np.array([0.1, 1.0]), max_iters=20)
    assert any("not positive definite" in fl for fl in res.flags)
    assert all(b < a for a, b in zip(res.losses, res.losses[1:]))


def test_newton_on_network_gradient_norms_decrease(h33):
    target = lowest_eigenpairs(h33).ground_state
    net = Network(NetworkConfig(width=3, precision="f64"), SHAPE)
    obj = OverlapObjective(net, h33.basis, target)
    theta = net.real_params
    for _ in range(200):
        theta = theta - 0.05 * obj.grad(theta)
    res = newton_refine(obj.value, obj.grad, theta, max_iters=3)
    assert res.losses[-1] <= res.losses[0]
    assert all(b < a for a, b in zip(res.losses, res.losses[1:]))


def test_newton_initial_hessian_reused():
    calls = []
    a = np.diag([1.0, 4.0])

    def hess(t):
        calls.append(1)
        return a

    res = newton_refine(lambda t: 0.5 * t @ a @ t, lambda t: a @ t, np.array([1.0, -1.0]), max_iters=1, hess_fn=hess, initial_hessian=a)
    assert not calls and res.losses[-1] < 1e-20


@pytest.mark.parametrize("precision", ["f32", "f64"])
def test_sr_step_matches_public_route(h33, precision):
    net = jiggle(f64net(width=6)).astype(precision)
    cfg = TrainConfig(method="sr", batch_size=200, diagonal_shift=0.05, seed=3)
    new, _ = sr_step(net, h33, cfg, SGD(0.1), np.random.default_rng(3))
    psi = full_state_vector(net, h33.basis)
    idx, counts = np.unique(exact_sample(psi, 200, np.random.default_rng(3)), return_counts=True)
    w = counts / counts.sum()
    o = net.jacobian(h33.basis.occupations[idx])
    h_loc, _ = local_energies(h33, psi, idx)
    delta = sr_direction(o, energy_gradient(h_loc, o, w), 0.05, w)
    tol = 1e-9 if precision == "f64" else 1e-3
    step = net.real_params - new.real_params
    assert np.linalg.norm(step - 0.1 * delta) / np.linalg.norm(0.1 * delta) < tol
