import math

import numpy as np
import pytest

from eddybox import (
    IntegratorConfig,
    ModelParams,
    StepFailureError,
    be_step,
    be_step_with_residual,
    find_equilibria,
    load_trajectory,
    save_trajectory,
    save_trajectory_csv,
    simulate_trajectory,
    weak_convergence_probe,
)
from eddybox.integrator import _n_steps


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=-1e-6)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(n_fixed_point_iters=0)
    with pytest.raises(ValueError):
        IntegratorConfig(save_stride=0)
    with pytest.raises(ValueError):
        IntegratorConfig(solver="euler_maruyama")


def test_solver_variant_mismatch(p_md):
    cfg = IntegratorConfig(solver="fixed_point")
    with pytest.raises(ValueError):
        be_step(p_md.variant("full"), np.zeros(5), np.zeros(3), cfg, p_md)
    cfg = IntegratorConfig(solver="asymptotic_newton")
    with pytest.raises(ValueError):
        be_step(p_md.variant("averaged"), np.zeros(2), np.zeros(2), cfg, p_md)


def test_wrong_channel_count(p_md):
    cfg = IntegratorConfig()
    with pytest.raises(ValueError):
        be_step(p_md.variant("full"), np.zeros(5), np.zeros(2), cfg, p_md)


def test_equilibrium_is_fixed_point(p_md):
    cfg = IntegratorConfig()
    eq = find_equilibria(p_md.variant("full"), p_md, ((0.9, 1.1), (0.0, 0.5)), 20)[0]
    s = np.array([eq.x, eq.y, 0.0, 0.0, 0.0])
    out = be_step(p_md.variant("full"), s, np.zeros(3), cfg, p_md)
    assert np.max(np.abs(out - s)) < 1e-12
    eq = find_equilibria(p_md.variant("averaged"), p_md, ((0.9, 1.1), (0.0, 0.5)), 20)[0]
    s = eq.xy
    out = be_step(p_md.variant("averaged"), s, np.zeros(2), cfg, p_md)
    assert np.max(np.abs(out - s)) < 1e-12


def test_linear_problem_closed_form(p_md):
    # the eddy-velocity equation is linear with rate 1/eps, so a noise-driven
    # step has the exact implicit solution v1 = (v0 + sqrt(2/eps) dW) / (1 + dt/eps);
    # the single Newton step must reproduce it to machine precision
    cfg = IntegratorConfig()
    v0 = 0.7
    dW = np.array([0.0, 0.0, 3e-4])
    s = np.array([1.0, 0.2, v0, 0.0, 0.0])
    out = be_step(p_md.variant("full"), s, dW, cfg, p_md)
    expected = (v0 + math.sqrt(2.0 / p_md.eps) * dW[2]) / (1.0 + cfg.dt / p_md.eps)
    assert out[2] == pytest.approx(expected, abs=1e-12)


def test_affine_reduced_closed_form():
    # with P_a = 0 the reduced drift is affine, so backward Euler has the
    # hand-derived solution  u1 = (rhs + dt*c) / (1 + dt*lam); ten fixed-point
    # iterations contract by (dt*lam)^10 and must match to machine precision
    p = ModelParams(eps_T=1.0, eps=0.02, P_a=0.0, P_e=10.0, sigma_x=0.1, sigma_y=0.2)
    cfg = IntegratorConfig(dt=1e-3)
    variant = p.variant("averaged")
    s = np.array([0.3, -0.4])
    dW = np.array([0.02, -0.01])
    out = be_step(variant, s, dW, cfg, p)
    lam_x = 1.0 / p.eps_T + 1.0 + 4.0 * p.P**2
    lam_y = 1.0 + 4.0 * p.P**2
    rhs_x = s[0] + p.sigma_x / math.sqrt(p.eps_T) * dW[0]
    rhs_y = s[1] + p.sigma_y * dW[1]
    expected = np.array(
        [
            (rhs_x + cfg.dt * (1.0 / p.eps_T)) / (1.0 + cfg.dt * lam_x),
            (rhs_y + cfg.dt * 1.0) / (1.0 + cfg.dt * lam_y),
        ]
    )
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_residuals_at_production_step(p_md):
    cfg = IntegratorConfig(residual_check_stride=1)
    traj = simulate_trajectory(
        p_md.variant("full"), np.zeros(5), (0.0, 10_000 * cfg.dt), cfg, p_md, rng_seed=3
    )
    assert traj.max_residual <= 1e-9
    # typical residuals are two orders below the bound
    assert traj.max_residual < 1e-10


def test_be_step_reports_residual(p_md):
    cfg = IntegratorConfig()
    rng = np.random.default_rng(0)
    s = np.array([0.97, 0.09, 0.5, 1.0, 0.1])
    _, res = be_step_with_residual(
        p_md.variant("full"), s, rng.standard_normal(3) * math.sqrt(cfg.dt), cfg, p_md
    )
    assert 0.0 <= res <= 1e-9


def test_sample_grid(p_md):
    cfg = IntegratorConfig()
    traj = simulate_trajectory(
        p_md.variant("averaged"), np.zeros(2), (0.0, 0.01), cfg, p_md, rng_seed=1
    )
    assert len(traj) == 50
    assert traj.times[0] == pytest.approx(2e-4)
    assert traj.times[-1] == pytest.approx(0.01)
    spacing = np.diff(traj.times)
    assert np.allclose(spacing, 2e-4, rtol=1e-9)
    # the production climatology grid: 5e6 steps, every 100th saved
    assert _n_steps(0.0, 10.0, 2e-6) == 5_000_000
    assert _n_steps(0.0, 10.0, 2e-6) // 100 == 50_000


def test_deterministic_fixed_point_trajectory(p_md):
    # no additive noise and no multiplicative noise (averaged variant):
    # a trajectory started at the equilibrium stays there
    p = ModelParams(
        eps_T=p_md.eps_T, eps=p_md.eps, P_a=p_md.P_a, P_e=p_md.P_e,
        sigma_x=0.0, sigma_y=0.0,
    )
    eq = find_equilibria(p.variant("averaged"), p, ((0.9, 1.1), (0.0, 0.5)), 20)[0]
    cfg = IntegratorConfig(save_stride=10)
    traj = simulate_trajectory(p.variant("averaged"), eq.xy, (0.0, 0.02), cfg, p, rng_seed=0)
    assert np.max(np.abs(traj.states - eq.xy)) < 1e-10


def test_bit_identical_repeats(p_md):
    cfg = IntegratorConfig(save_stride=10)
    a = simulate_trajectory(p_md.variant("gaussian"), np.zeros(2), (0.0, 0.05), cfg, p_md, rng_seed=9)
    b = simulate_trajectory(p_md.variant("gaussian"), np.zeros(2), (0.0, 0.05), cfg, p_md, rng_seed=9)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.times, b.times)


def test_noise_channel_accounting(p_md, counting_rng):
    cfg = IntegratorConfig(save_stride=100)
    n_steps = 1000
    for kind, channels in (("full", 3), ("averaged", 2), ("gaussian", 3)):
        variant = p_md.variant(kind)
        rng = counting_rng(0)
        simulate_trajectory(
            variant, np.zeros(variant.state_dim), (0.0, n_steps * cfg.dt), cfg, p_md, rng=rng
        )
        assert rng.n_draws == n_steps * channels


class _ReplayRNG:
    """Generator wrapper that records every draw it hands out."""

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self.log = []

    def standard_normal(self, size):
        out = self._rng.standard_normal(size)
        self.log.append(out.copy())
        return out


def test_ito_convention():
    # with P_a = 0 the gaussian variant is an affine SDE with one shared
    # multiplicative channel, so the implicit step with pre-step (Ito) noise
    # has a closed form; replaying the production integrator's own draws
    # through it must reproduce the trajectory exactly, while a comparator
    # that evaluates the noise at the post-step state drifts apart by a
    # large, detectable factor in the ensemble variance of y
    p = ModelParams(eps_T=1.0, eps=0.02, P_a=0.0, P_e=6.2876, sigma_x=0.0, sigma_y=0.0)
    amp = 4.0 * math.sqrt(5.0 * p.eps) * p.P**2
    assert amp == pytest.approx(1.0, abs=1e-3)
    dt, n_steps = 1e-3, 500
    lam_x = 1.0 / p.eps_T + 1.0 + 4.0 * p.P**2
    lam_y = 1.0 + 4.0 * p.P**2
    cfg = IntegratorConfig(dt=dt, save_stride=n_steps, residual_check_stride=0)

    rng = _ReplayRNG(5)
    traj = simulate_trajectory(
        p.variant("gaussian"), np.array([1.0, 1.0]), (0.0, n_steps * dt), cfg, p, rng=rng
    )
    draws = np.vstack(rng.log)
    x, y = 1.0, 1.0
    sdt = math.sqrt(dt)
    for i in range(n_steps):
        xi = draws[i, 2] * sdt
        x = (x + amp * x * xi + dt / p.eps_T) / (1.0 + dt * lam_x)
        y = (y + amp * y * xi + dt) / (1.0 + dt * lam_y)
    np.testing.assert_allclose(traj.states[-1], [x, y], rtol=0, atol=1e-12)

    # detectability of the convention: same noise, post-step evaluation
    n_members = 20_000
    gen = np.random.default_rng(123)
    y_ito = np.ones(n_members)
    y_anti = np.ones(n_members)
    for _ in range(n_steps):
        xi = gen.standard_normal(n_members) * sdt
        y_ito = (y_ito + amp * y_ito * xi + dt) / (1.0 + dt * lam_y)
        y_anti = (y_anti + dt) / (1.0 + dt * lam_y - amp * xi)
    assert np.var(y_anti) / np.var(y_ito) > 1.8
    assert np.mean(y_anti) / np.mean(y_ito) > 1.3


def test_ou_chain_stationary_variance(p_md):
    # backward Euler applied to the eddy velocity gives the exact chain
    # v_{n+1} = (v_n + sqrt(2 dt/eps) xi) / (1 + dt/eps), whose stationary
    # variance is (2 dt/eps) / ((1 + dt/eps)^2 - 1) = 1 / (1 + dt/(2 eps))
    p = ModelParams(
        eps_T=p_md.eps_T, eps=p_md.eps, P_a=p_md.P_a, P_e=p_md.P_e,
        sigma_x=0.0, sigma_y=0.0,
    )
    cfg = IntegratorConfig(save_stride=10, residual_check_stride=0)
    traj = simulate_trajectory(
        p.variant("full"), np.array([0.989, 0.22, 0.0, 0.0, 0.0]),
        (0.0, 1e7 * cfg.dt), cfg, p, rng_seed=21,
    )
    v = traj.states[:, 2]
    expected = 1.0 / (1.0 + cfg.dt / (2.0 * p.eps))
    assert np.var(v) == pytest.approx(expected, rel=0.02)


def test_step_failure_reports_index(p_md):
    cfg = IntegratorConfig(dt=10.0)
    with pytest.raises(StepFailureError) as err:
        simulate_trajectory(p_md.variant("averaged"), np.zeros(2), (0.0, 100.0), cfg, p_md, rng_seed=0)
    assert err.value.step == 1


def test_simulate_validation(p_md):
    cfg = IntegratorConfig()
    with pytest.raises(ValueError):
        simulate_trajectory(p_md.variant("full"), np.zeros(5), (1.0, 1.0), cfg, p_md)
    with pytest.raises(ValueError):
        simulate_trajectory(p_md.variant("full"), np.zeros(4), (0.0, 1.0), cfg, p_md)


def test_weak_convergence_probe(p_md):
    rows = weak_convergence_probe(
        p_md.variant("averaged"), np.array([0.974, 0.093]), 0.02,
        [4e-6, 2e-6], 120, p_md, rng_seed=5,
    )
    assert [r.dt for r in rows] == [4e-6, 2e-6]
    diff = abs(rows[0].mean_x - rows[1].mean_x)
    assert diff < 2.0 * math.hypot(rows[0].se_mean, rows[1].se_mean)


def test_weak_convergence_zero_noise_member_independent():
    p = ModelParams(eps_T=1.0, eps=0.01, P_a=6.0, P_e=5.0, sigma_x=0.0, sigma_y=0.0)
    rows_a = weak_convergence_probe(p.variant("averaged"), np.array([0.5, 0.5]), 0.05,
                                    [1e-3], 100, p, rng_seed=1)
    rows_b = weak_convergence_probe(p.variant("averaged"), np.array([0.5, 0.5]), 0.05,
                                    [1e-3], 150, p, rng_seed=2)
    assert rows_a[0].mean_x == rows_b[0].mean_x
    # all members follow the same deterministic path (variance is pure
    # accumulator roundoff)
    assert rows_a[0].var_x < 1e-30 and rows_b[0].var_x < 1e-30


def test_weak_convergence_validation(p_md):
    with pytest.raises(ValueError):
        weak_convergence_probe(p_md.variant("averaged"), np.zeros(2), 0.01, [1e-5], 50, p_md)
    with pytest.raises(ValueError):
        weak_convergence_probe(p_md.variant("averaged"), np.zeros(2), 0.01, [1e-6, 1e-5], 100, p_md)


def test_serialization_roundtrip(tmp_path, p_md):
    cfg = IntegratorConfig(save_stride=20)
    traj = simulate_trajectory(p_md.variant("full"), np.zeros(5), (0.0, 0.01), cfg, p_md, rng_seed=4)
    path = tmp_path / "t.traj"
    save_trajectory(traj, path)
    back = load_trajectory(path, params=p_md)
    assert back.variant == traj.variant
    assert back.config.dt == traj.config.dt
    assert back.config.save_stride == traj.config.save_stride
    assert back.seed == traj.seed
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.states, traj.states)


def test_serialization_rejects_other_files(tmp_path):
    path = tmp_path / "junk.traj"
    path.write_bytes(b"NOTAMAGIC" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_trajectory(path)


def test_csv_export(tmp_path, p_md):
    cfg = IntegratorConfig(save_stride=50)
    traj = simulate_trajectory(p_md.variant("full"), np.zeros(5), (0.0, 0.001), cfg, p_md, rng_seed=4)
    path = tmp_path / "t.csv"
    save_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,v,T,S"
    assert len(lines) == 1 + len(traj)
    row = np.array([float(tok) for tok in lines[1].split(",")])
    assert row[0] == pytest.approx(traj.times[0])
    np.testing.assert_allclose(row[1:], traj.states[0])

    reduced = simulate_trajectory(p_md.variant("averaged"), np.zeros(2), (0.0, 0.001),
                                  cfg, p_md, rng_seed=4)
    save_trajectory_csv(reduced, path)
    assert path.read_text().splitlines()[0] == "t,x,y"
