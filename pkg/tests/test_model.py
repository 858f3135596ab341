import math

import numpy as np
import pytest

from eddybox import (
    ModelParams,
    Stability,
    bifurcation_scan,
    diffusion,
    drift,
    drift_jacobian,
    find_equilibria,
    lyapunov_certificate,
    slow_drift,
    suggest_alpha,
)
from eddybox.homogenization import mean_eddy_flux
from eddybox.model import (
    drift_inner_product,
    slow_drift_jacobian,
    weighted_norm_sq,
)


# ---------------------------------------------------------------------------
# parameters


def test_derived_P(p_md, p_nmd):
    assert p_md.P == math.sqrt(p_md.eps) * p_md.P_e
    assert p_md.P**2 == pytest.approx(1.28)
    assert p_nmd.P == pytest.approx(0.45254834, abs=1e-8)


def test_param_validation():
    with pytest.raises(ValueError):
        ModelParams(eps_T=0.0, eps=1e-4, P_a=6, P_e=80, sigma_x=0.005, sigma_y=0.15)
    with pytest.raises(ValueError):
        ModelParams(eps_T=1e-3, eps=-1e-4, P_a=6, P_e=80, sigma_x=0.005, sigma_y=0.15)
    with pytest.raises(ValueError):
        ModelParams(eps_T=1e-3, eps=1e-4, P_a=6, P_e=80, sigma_x=-0.1, sigma_y=0.15)


def test_with_P_resets_Pe(p_md):
    q = p_md.with_P(0.2)
    assert q.P == pytest.approx(0.2, rel=1e-14)
    assert q.P_e == pytest.approx(0.2 / math.sqrt(p_md.eps), rel=1e-14)


# ---------------------------------------------------------------------------
# drift


def test_full_drift_at_origin(p_md):
    b = drift(p_md.variant("full"), np.zeros(5), p_md)
    np.testing.assert_allclose(b, [400.0, 1.0, 0.0, 0.0, 0.0], atol=1e-14)


def test_averaged_drift_near_quoted_equilibrium(p_md):
    # (0.974, 0.093) is the equilibrium quoted to three decimals; with
    # |d(drift_x)/dx| ~ 4e2 the drift at the rounded point is ~0.1, not 1e-2
    b = drift(p_md.variant("averaged"), np.array([0.974, 0.093]), p_md)
    assert np.linalg.norm(b) < 0.1


def test_full_drift_near_quoted_equilibrium(p_md):
    b = drift(p_md.variant("full"), np.array([0.989, 0.22, 0.0, 0.0, 0.0]), p_md)
    assert np.all(np.abs(b) < 0.1 / p_md.eps_T)


def test_full_vs_averaged_drift_identity(p_md, p_nmd):
    # slow part of the full drift on the eddy-free slice plus the mean eddy
    # flux equals the averaged drift, to machine precision
    rng = np.random.default_rng(0)
    for p in (p_md, p_nmd):
        for _ in range(50):
            x, y = rng.uniform(-2, 2, size=2)
            full = drift(p.variant("full"), np.array([x, y, 0.0, 0.0, 0.0]), p)
            avg = drift(p.variant("averaged"), np.array([x, y]), p)
            expected = full[:2] + mean_eddy_flux(x, y, p)
            np.testing.assert_allclose(avg, expected, rtol=0, atol=1e-12)


def test_gaussian_and_averaged_share_drift(p_md):
    rng = np.random.default_rng(1)
    states = rng.uniform(-2, 2, size=(100, 2))
    np.testing.assert_array_equal(
        drift(p_md.variant("gaussian"), states, p_md),
        drift(p_md.variant("averaged"), states, p_md),
    )


def test_drift_contract_violations(p_md):
    with pytest.raises(ValueError):
        drift(p_md.variant("full"), np.zeros(2), p_md)
    with pytest.raises(ValueError):
        drift(p_md.variant("averaged"), np.zeros(5), p_md)
    with pytest.raises(ValueError):
        drift(p_md.variant("averaged"), np.array([np.nan, 0.0]), p_md)
    with pytest.raises(ValueError):
        drift(p_md.variant("full"), np.array([np.inf, 0, 0, 0, 0]), p_md)


def test_variant_regime_mismatch_rejected(p_md, p_nmd):
    with pytest.raises(ValueError):
        drift(p_nmd.variant("full"), np.zeros(5), p_md)


# ---------------------------------------------------------------------------
# diffusion


def test_full_diffusion_structure(p_md):
    sig = diffusion(p_md.variant("full"), np.ones(5), p_md)
    assert sig.shape == (5, 3)
    assert sig[0, 0] == pytest.approx(p_md.sigma_x / math.sqrt(p_md.eps_T))
    assert sig[1, 1] == pytest.approx(p_md.sigma_y)
    assert sig[2, 2] == pytest.approx(math.sqrt(2.0 / p_md.eps))
    # T and S rows carry no noise; columns span exactly (x, y, v)
    assert np.all(sig[3:, :] == 0.0)
    assert np.count_nonzero(sig) == 3


def test_averaged_diffusion_diagonal(p_md):
    sig = diffusion(p_md.variant("averaged"), np.array([0.97, 0.09]), p_md)
    np.testing.assert_allclose(
        sig, np.diag([p_md.sigma_x / math.sqrt(p_md.eps_T), p_md.sigma_y])
    )


def test_gaussian_diffusion_amplitudes(p_md, p_nmd):
    sig = diffusion(p_md.variant("gaussian"), np.array([1.0, 0.093]), p_md)
    assert sig.shape == (2, 3)
    assert sig[0, 2] == pytest.approx(0.16, abs=2e-3)
    assert sig[1, 2] == pytest.approx(0.015, abs=2e-4)
    # single shared multiplicative channel: x and y entries in ratio x:y
    assert sig[1, 2] / sig[0, 2] == pytest.approx(0.093)
    sig = diffusion(p_nmd.variant("gaussian"), np.array([1.0, 0.5]), p_nmd)
    assert sig[0, 2] == pytest.approx(0.026, abs=2e-4)


# ---------------------------------------------------------------------------
# Jacobians


def _fd_jacobian(fun, s, h=1e-6):
    dim_out = fun(s).shape[0]
    J = np.empty((dim_out, s.size))
    for j in range(s.size):
        step = h * max(1.0, abs(s[j]))
        up = s.copy()
        dn = s.copy()
        up[j] += step
        dn[j] -= step
        J[:, j] = (fun(up) - fun(dn)) / (2.0 * step)
    return J


@pytest.mark.parametrize("kind", ["full", "averaged", "gaussian"])
def test_jacobian_matches_finite_differences(p_md, kind):
    variant = p_md.variant(kind)
    rng = np.random.default_rng(42)
    for _ in range(100):
        s = rng.uniform(-2, 2, size=variant.state_dim)
        J = drift_jacobian(variant, s, p_md)
        J_fd = _fd_jacobian(lambda u: drift(variant, u, p_md), s)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - J_fd)) / scale < 1e-6


def test_slow_jacobian_matches_finite_differences(p_nmd):
    variant = p_nmd.variant("averaged")
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = rng.uniform(-2, 2, size=2)
        J = slow_drift_jacobian(variant, s, p_nmd)
        J_fd = _fd_jacobian(lambda u: slow_drift(variant, u, p_nmd), s)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - J_fd)) / scale < 1e-6


# ---------------------------------------------------------------------------
# equilibria


def test_full_model_equilibria(p_md):
    eqs = find_equilibria(p_md.variant("full"), p_md, ((0.9, 1.1), (0.0, 1.3)), 30)
    assert len(eqs) == 3
    stable = [e for e in eqs if e.stability is Stability.STABLE]
    saddles = [e for e in eqs if e.stability is Stability.SADDLE]
    assert len(stable) == 2 and len(saddles) == 1
    stable.sort(key=lambda e: e.y)
    assert stable[0].x == pytest.approx(0.989, abs=5e-3)
    assert stable[0].y == pytest.approx(0.22, abs=5e-3)
    assert stable[1].x == pytest.approx(0.998, abs=5e-3)
    assert stable[1].y == pytest.approx(1.00, abs=5e-3)
    assert stable[0].y < saddles[0].y < stable[1].y


def test_averaged_model_single_equilibrium(p_md):
    eqs = find_equilibria(p_md.variant("averaged"), p_md, ((0.9, 1.1), (0.0, 1.3)), 30)
    assert len(eqs) == 1
    assert eqs[0].stability is Stability.STABLE
    assert eqs[0].x == pytest.approx(0.974, abs=5e-3)
    assert eqs[0].y == pytest.approx(0.093, abs=5e-3)


def test_no_mean_diffusion_equilibria(p_nmd):
    eqs = find_equilibria(p_nmd.variant("averaged"), p_nmd, ((0.9, 1.1), (0.0, 1.3)), 30)
    assert len(eqs) == 3
    targets = [(0.99, 0.24), (1.00, 0.65), (1.00, 1.11)]
    kinds = [Stability.STABLE, Stability.SADDLE, Stability.STABLE]
    for eq, (tx, ty), kind in zip(eqs, targets, kinds):
        assert eq.x == pytest.approx(tx, abs=5e-3)
        assert eq.y == pytest.approx(ty, abs=5e-3)
        assert eq.stability is kind


def test_full_no_mean_diffusion_slice_has_single_root(p_nmd):
    # on the eddy-free slice the full drift loses the P-dependent terms, so
    # the multiple equilibria of the effective slow dynamics at P_e = 32 do
    # not appear there; the slice has a single root near (1.0, 1.35)
    eqs = find_equilibria(p_nmd.variant("full"), p_nmd, ((0.9, 1.1), (0.0, 1.6)), 40)
    assert len(eqs) == 1
    assert eqs[0].y == pytest.approx(1.346, abs=5e-3)


def test_equilibria_residual_and_stability_recheck(p_md, p_nmd):
    for p, kind in ((p_md, "full"), (p_md, "averaged"), (p_nmd, "averaged")):
        variant = p.variant(kind)
        for eq in find_equilibria(variant, p, ((0.9, 1.1), (0.0, 1.3)), 25):
            g = slow_drift(variant, eq.xy, p)
            assert np.max(np.abs(g)) <= 1e-10
            J_fd = _fd_jacobian(lambda u: slow_drift(variant, u, p), eq.xy)
            ev = np.linalg.eigvals(J_fd)
            if np.all(np.abs(ev.real) > 1e-6):
                fd_kind = (
                    Stability.STABLE if np.all(ev.real < 0)
                    else Stability.SADDLE if np.any(ev.real < 0)
                    else Stability.UNSTABLE
                )
                assert fd_kind is eq.stability


def test_empty_result_is_valid(p_md):
    eqs = find_equilibria(p_md.variant("averaged"), p_md, ((5.0, 6.0), (5.0, 6.0)), 5)
    assert eqs == []


def test_search_box_validation(p_md):
    with pytest.raises(ValueError):
        find_equilibria(p_md.variant("averaged"), p_md, ((1.0, 0.5), (0.0, 1.0)), 10)
    with pytest.raises(ValueError):
        find_equilibria(p_md.variant("averaged"), p_md, ((0.5, 1.0), (0.0, 1.0)), 1)


# ---------------------------------------------------------------------------
# bifurcation scan


def test_bifurcation_mean_diffusion(p_md):
    scan = bifurcation_scan(p_md.variant("averaged"), p_md, (0.05, 0.3), 26, grid_n=20)
    assert scan.unreliable_intervals == []
    assert len(scan.critical_values) == 1
    assert scan.critical_values[0] == pytest.approx(0.117, abs=5e-3)
    # 3 equilibria below the threshold, 1 above
    assert scan.counts[0] == 3 and scan.counts[-1] == 1


def test_bifurcation_no_mean_diffusion(p_nmd):
    scan = bifurcation_scan(p_nmd.variant("averaged"), p_nmd, (0.25, 0.6), 36, grid_n=20)
    assert len(scan.critical_values) == 2
    lo, hi = sorted(scan.critical_values)
    assert lo == pytest.approx(0.301, abs=5e-3)
    assert hi == pytest.approx(0.514, abs=5e-3)
    assert scan.counts[0] == 1 and scan.counts[-1] == 1 and max(scan.counts) == 3


def test_bifurcation_constant_regime(p_md):
    scan = bifurcation_scan(p_md.variant("averaged"), p_md, (0.8, 1.0), 6, grid_n=15)
    assert scan.critical_values == []
    assert np.all(scan.counts == 1)


def test_bifurcation_stable_under_refinement(p_md):
    coarse = bifurcation_scan(p_md.variant("averaged"), p_md, (0.10, 0.13), 4, grid_n=16)
    fine = bifurcation_scan(p_md.variant("averaged"), p_md, (0.10, 0.13), 8, grid_n=32)
    assert len(coarse.critical_values) == len(fine.critical_values) == 1
    assert abs(coarse.critical_values[0] - fine.critical_values[0]) <= 1e-4


# ---------------------------------------------------------------------------
# dissipativity certificate


def test_lyapunov_certificate_holds(p_md):
    variant = p_md.variant("full")
    beta = min(1.0 / p_md.eps, p_md.eps_T / 2.0) / 10.0
    alpha = suggest_alpha(p_md, variant, beta, 1e3, 200_000, rng_seed=11)
    report = lyapunov_certificate(p_md, variant, alpha, beta, 1e3, 200_000, rng_seed=11)
    assert report.min_margin >= 0.0
    # a fresh sample set with slightly inflated alpha should also pass
    report2 = lyapunov_certificate(
        p_md, variant, 1.1 * alpha + 1.0, beta, 1e3, 200_000, rng_seed=99
    )
    assert report2.min_margin >= 0.0


def test_lyapunov_no_mean_diffusion(p_nmd):
    variant = p_nmd.variant("full")
    beta = min(1.0 / p_nmd.eps, p_nmd.eps_T / 2.0) / 10.0
    alpha = suggest_alpha(p_nmd, variant, beta, 1e3, 100_000, rng_seed=5)
    report = lyapunov_certificate(p_nmd, variant, alpha, beta, 1e3, 100_000, rng_seed=5)
    assert report.min_margin >= 0.0


def test_lyapunov_margin_at_origin(p_md):
    variant = p_md.variant("full")
    origin = np.zeros(5)
    assert drift_inner_product(variant, origin, p_md) == 0.0
    assert weighted_norm_sq(variant, origin, p_md) == 0.0
    # so the margin at the origin is alpha itself, positive by assumption


def test_lyapunov_fails_for_large_beta(p_md):
    # the eddy terms contribute -v^2 - (2/P^2)(T^2+S^2) to <u,F(u)>; with
    # beta >= 1/eps the -beta ||u||^2 term can no longer absorb them (nor the
    # slow quadratics at moderate radius), so the condition must fail
    variant = p_md.variant("full")
    beta = min(1.0 / p_md.eps, p_md.eps_T / 2.0) / 10.0
    alpha = suggest_alpha(p_md, variant, beta, 1e3, 50_000, rng_seed=2)
    report = lyapunov_certificate(p_md, variant, alpha, 1.0 / p_md.eps, 1e3, 100_000, rng_seed=2)
    assert report.min_margin < 0.0
    report = lyapunov_certificate(p_md, variant, alpha, 2.0 / p_md.eps, 1e3, 100_000, rng_seed=2)
    assert report.min_margin < 0.0


def test_lyapunov_parameter_validation(p_md):
    with pytest.raises(ValueError):
        lyapunov_certificate(p_md, p_md.variant("full"), -1.0, 1e-4, 10.0, 100)
    with pytest.raises(ValueError):
        lyapunov_certificate(p_md, p_md.variant("full"), 1.0, 0.0, 10.0, 100)
