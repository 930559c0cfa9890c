import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdlab import (
    DistributionState,
    InvalidArgument,
    NormIndices,
    PhaseSpaceGrid,
    VelocityProfile,
    algebra_norm_F,
    equilibrium_state,
    hybrid_norm_Z,
    norm_lambda_mu_beta,
    sample_initial,
)
from vdlab.norms import mode_weights

# kt * 2V is an integer for t in {0.5, 1, 2}, so free transport maps the eta grid onto itself
WIDE = PhaseSpaceGrid(n_x=16, n_v=512, V=8.0)


def free_transport(state, t):
    g = state.grid
    phase = np.exp(-2j * np.pi * np.outer(g.k, g.v) * t)
    return DistributionState.from_fhat(g, state.fhat * phase, state.t + t)


def random_state(rng, grid, k_max=3):
    """Maxwellian background plus shifted, rescaled Maxwellian packets on modes 1..k_max."""
    x, v = grid.x, grid.v
    vals = np.exp(-v * v / 2)[None, :] / math.sqrt(2 * math.pi) * np.ones((grid.n_x, 1))
    for l in range(1, k_max + 1):
        a, phi = rng.uniform(0.01, 0.1), rng.uniform(0, 2 * math.pi)
        # packets stay below 1e-13 at |v| = V so the v-spectrum has no wraparound jump
        u, T = rng.uniform(-1.0, 1.0), rng.uniform(0.5, 0.8)
        packet = np.exp(-(v - u) ** 2 / (2 * T)) / math.sqrt(2 * math.pi * T)
        vals = vals + a * np.cos(2 * math.pi * l * x + phi)[:, None] * packet[None, :]
    return DistributionState(grid, vals)


def x_only_state(grid, coeffs):
    """f(x, v) = g(x) with g = sum_l c_l cos(2 pi l x), constant in v."""
    g = sum(c * np.cos(2 * math.pi * l * grid.x) for l, c in coeffs.items())
    return DistributionState(grid, np.repeat(np.asarray(g)[:, None], grid.n_v, axis=1))


def brute_ftilde(state):
    g = state.grid
    X, V = np.meshgrid(g.x, g.v, indexing="ij")
    out = np.empty((g.n_x, g.n_v), dtype=complex)
    for i, k in enumerate(g.k_full):
        phase_x = np.exp(-2j * np.pi * k * X)
        for j, eta in enumerate(g.eta):
            out[i, j] = np.sum(state.values * phase_x * np.exp(-2j * np.pi * eta * V)) * g.dx * g.dv
    return out


class TestNormIndices:
    def test_validation(self):
        with pytest.raises(InvalidArgument):
            NormIndices(lam=-1)
        with pytest.raises(InvalidArgument):
            NormIndices(p=3)
        assert NormIndices(tau=-2.0).tau == -2.0

    def test_with(self):
        idx = NormIndices(lam=0.1).with_(tau=2.0)
        assert (idx.lam, idx.tau) == (0.1, 2.0)


class TestAlgebraNorm:
    def test_cosine(self):
        c = np.fft.fft(np.cos(2 * np.pi * np.arange(16) / 16)) / 16
        assert algebra_norm_F(c, 0.0) == pytest.approx(1.0, rel=1e-14)
        assert algebra_norm_F(c, 0.1) == pytest.approx(math.exp(0.2 * math.pi), rel=1e-14)
        assert algebra_norm_F(c, 0.1) == pytest.approx(1.8745, abs=1e-4)

    def test_constant_homogeneous(self):
        c = np.zeros(16, dtype=complex)
        c[0] = 3.0
        assert algebra_norm_F(c, 0.2, 1.0, homogeneous=True) == 0.0
        assert algebra_norm_F(c, 0.2, 1.0) == 3.0

    def test_nonfinite(self):
        with pytest.raises(InvalidArgument):
            algebra_norm_F([1.0, np.nan], 0.0)

    @pytest.mark.parametrize("w,gamma", [(0.0, 0.0), (0.05, 0.0), (0.1, 1.0), (0.3, 2.5)])
    def test_algebra_inequality(self, rng, w, gamma):
        modes = np.arange(-16, 17)
        prod_modes = np.arange(-32, 33)
        violations = 0
        for _ in range(200):
            a = rng.uniform(-1, 1, modes.size)
            b = rng.uniform(-1, 1, modes.size)
            lhs = algebra_norm_F(np.convolve(a, b), w, gamma, modes=prod_modes)
            rhs = algebra_norm_F(a, w, gamma, modes=modes) * algebra_norm_F(b, w, gamma, modes=modes)
            violations += lhs > rhs * (1 + 1e-12)
        assert violations == 0

    def test_weights(self):
        np.testing.assert_allclose(mode_weights([-2, 0, 3], 0.1, 1.0),
                                   [3 * math.exp(0.4 * math.pi), 1.0, 4 * math.exp(0.6 * math.pi)])


class TestHybridNorm:
    def test_zero(self):
        z = hybrid_norm_Z(DistributionState(WIDE, np.zeros((16, 512))), NormIndices(lam=0.3, mu=0.1, tau=1.0))
        assert z.value == 0.0 and z.converged

    @pytest.mark.parametrize("lam,mu,gamma,tau", [(0.1, 0.0, 0.0, 1.0), (0.2, 0.05, 1.0, 1.0), (0.05, 0.2, 2.0, -1.5)])
    def test_x_only_equals_algebra_norm(self, lam, mu, gamma, tau):
        state = x_only_state(WIDE, {0: 1.0, 1: 0.3, 2: 0.05, 3: 0.01})
        z = hybrid_norm_Z(state, NormIndices(lam=lam, mu=mu, gamma=gamma, tau=tau))
        coeffs = np.fft.fft(state.values[:, 0]) / WIDE.n_x
        f = algebra_norm_F(coeffs, lam * abs(tau) + mu, gamma)
        assert z.converged
        assert z.value == pytest.approx(f, rel=1e-11)

    def test_gliding_invariance(self, rng):
        # the roundoff floor of the eta spectrum is amplified by e^{2 pi lam |eta|}, so lam stays small
        worst = 0.0
        for _ in range(10):
            fi = random_state(rng, WIDE)
            for lam in (0.01, 0.02):
                base = hybrid_norm_Z(fi, NormIndices(lam=lam, mu=0.02, gamma=1.0), k_max=3)
                for t in (0.5, 1.0, 2.0):
                    moved = hybrid_norm_Z(free_transport(fi, t), NormIndices(lam=lam, mu=0.02, gamma=1.0, tau=t), k_max=3)
                    worst = max(worst, abs(moved.value - base.value) / base.value)
        assert worst < 1e-10

    def test_filamentation(self, rng):
        fi = random_state(rng, WIDE)
        idx = NormIndices(lam=0.02)
        fixed = [hybrid_norm_Z(free_transport(fi, t), idx, k_max=3).value for t in (0.0, 0.5, 1.0, 2.0)]
        glide = [hybrid_norm_Z(free_transport(fi, t), idx.with_(tau=t), k_max=3).value for t in (0.0, 0.5, 1.0, 2.0)]
        assert all(b > a for a, b in zip(fixed, fixed[1:]))
        np.testing.assert_allclose(glide, glide[0], rtol=1e-10)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), which=st.sampled_from(["lam", "mu", "gamma"]),
           base=st.floats(0.0, 0.2), bump=st.floats(0.0, 0.2), p=st.sampled_from([1, 2, math.inf]))
    def test_monotone_in_indices(self, seed, which, base, bump, p):
        state = random_state(np.random.default_rng(seed), WIDE)
        idx = NormIndices(lam=0.05, mu=0.05, gamma=0.5, p=p).with_(**{which: base})
        lo = hybrid_norm_Z(state, idx, k_max=3).value
        hi = hybrid_norm_Z(state, idx.with_(**{which: base + bump}), k_max=3).value
        assert hi >= lo * (1 - 1e-13)

    def test_lp_variants(self):
        state = x_only_state(WIDE, {0: 1.0, 1: 0.25})
        idx = NormIndices()
        z_inf = hybrid_norm_Z(state, idx).value
        # constant-in-v rows: L^1 over [-V, V) is 2V times the sup, L^2 is sqrt(2V) times
        assert hybrid_norm_Z(state, idx.with_(p=1)).value == pytest.approx(16 * z_inf, rel=1e-13)
        assert hybrid_norm_Z(state, idx.with_(p=2)).value == pytest.approx(4 * z_inf, rel=1e-13)

    def test_divergent_width_flagged(self, maxwellian):
        state = sample_initial(maxwellian, [(1, 1e-3)], WIDE)
        z = hybrid_norm_Z(state, NormIndices(lam=5.0), n_max=10)
        assert not z.converged

    def test_unpacks(self, maxwellian):
        value, converged, tail = hybrid_norm_Z(equilibrium_state(maxwellian, WIDE), NormIndices(lam=0.1))
        assert converged and value > 0 and tail >= 0


@pytest.fixture(scope="module")
def eq8(maxwellian):
    return equilibrium_state(maxwellian, WIDE)


class TestLambdaMuBeta:
    def test_maxwellian_interior_sup(self, eq8):
        res = norm_lambda_mu_beta(eq8, 0.2, 0.0, 0.5)
        assert not res.truncation_dominated
        ft = np.abs(brute_ftilde(eq8))
        weight = np.exp(2 * np.pi * 0.2 * np.abs(WIDE.eta))[None, :]
        assert res.sup_term == pytest.approx(np.max(ft * weight), rel=1e-12)
        integral = np.sum(eq8.values * np.exp(np.pi * np.abs(WIDE.v))[None, :]) * WIDE.dx * WIDE.dv
        assert res.integral_term == pytest.approx(integral, rel=1e-12)
        assert math.isfinite(res.value)

    def test_zero(self):
        assert norm_lambda_mu_beta(DistributionState(WIDE, np.zeros((16, 512))), 0.2, 0.1, 0.3).value == 0.0

    def test_homogeneity(self, maxwellian):
        eq = equilibrium_state(maxwellian, WIDE)
        d1 = norm_lambda_mu_beta(sample_initial(maxwellian, [(1, 1e-3)], WIDE) - eq, 0.2, 0.1, 0.5).value
        d2 = norm_lambda_mu_beta(sample_initial(maxwellian, [(1, 2e-3)], WIDE) - eq, 0.2, 0.1, 0.5).value
        assert d2 == pytest.approx(2 * d1, rel=1e-12)

    def test_truncation_flag(self, eq8):
        assert norm_lambda_mu_beta(eq8, 3.0, 0.0, 0.0).truncation_dominated

    def test_beta_overflow_rejected(self, eq8):
        with pytest.raises(InvalidArgument):
            norm_lambda_mu_beta(eq8, 0.1, 0.0, 20.0)
