import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from vdlab import (
    ATTRACTIVE,
    DistributionState,
    Interaction,
    InvalidArgument,
    NumericalFailure,
    PhaseSpaceGrid,
    VelocityProfile,
    equilibrium_state,
    force_field,
    sample_initial,
)
from vdlab.model import (
    UnresolvedTailWarning,
    potential_coeff,
    profile_fourier,
    profile_marginal,
    read_two_column_csv,
    write_two_column_csv,
)


def fourier_by_quadrature(profile, eta):
    """int f0(v) exp(-2 i pi eta v) dv by adaptive quadrature on the effective support."""
    R = profile.support_radius(1e-18)
    if eta == 0:
        return complex(quad(profile.density, -R, R, epsabs=1e-15, epsrel=1e-13)[0])
    opts = dict(wvar=2 * math.pi * eta, epsabs=1e-15, epsrel=1e-13, limit=800)
    re = quad(profile.density, -R, R, weight="cos", **opts)[0]
    # centred profiles are even, so the sine part vanishes
    im = -quad(profile.density, -R, R, weight="sin", **opts)[0] if profile.shift else 0.0
    return complex(re, im)


class TestVelocityProfile:
    def test_unit_mass(self):
        for prof in (VelocityProfile.maxwellian(1.0), VelocityProfile.maxwellian(0.3),
                     VelocityProfile.two_stream(0.05, 2.0)):
            mass = quad(prof.density, -np.inf, np.inf, epsabs=1e-15, limit=200)[0]
            assert mass == pytest.approx(1.0, abs=1e-12)

    def test_lambda0(self):
        assert VelocityProfile.maxwellian().lambda0 > 0
        tab = VelocityProfile.tabulated(np.linspace(-5, 5, 101), np.exp(-np.linspace(-5, 5, 101) ** 2))
        assert tab.lambda0 == 0

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidArgument):
            VelocityProfile.maxwellian(-1.0)
        with pytest.raises(InvalidArgument):
            VelocityProfile.tabulated([0.0, 1.0, 3.0], [1.0, 1.0, 1.0])
        with pytest.raises(InvalidArgument):
            VelocityProfile.tabulated([0.0, 1.0, 2.0], [1.0, -1.0, 1.0])

    def test_csv_round_trip(self, tmp_path):
        v = np.linspace(-6, 6, 241)
        f = np.exp(-v * v / 2) / math.sqrt(2 * math.pi)
        path = tmp_path / "f0.csv"
        write_two_column_csv(path, ("v", "f0"), v, f)
        prof = VelocityProfile.from_csv(path)
        assert prof.kind == "tabulated"
        np.testing.assert_allclose(prof.density(v), f / (0.05 * (f.sum() - 0.5 * (f[0] + f[-1]))), rtol=1e-12)

    def test_csv_header_required(self, tmp_path):
        path = tmp_path / "nohead.csv"
        path.write_text("0,1\n1,2\n")
        with pytest.raises(InvalidArgument, match="header"):
            read_two_column_csv(path)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
class TestProfileFourier:
    def test_unit_mass_at_zero(self, maxwellian):
        assert profile_fourier(maxwellian, 0.0) == 1.0

    def test_maxwellian_spot_value(self, maxwellian):
        assert profile_fourier(maxwellian, 0.5) == pytest.approx(7.192e-3, rel=1e-4)
        assert profile_fourier(maxwellian, 0.5) == pytest.approx(math.exp(-math.pi**2 / 2), rel=1e-14)

    @pytest.mark.parametrize("eta", [0.0, 0.1, 0.37, 0.5, 0.8, 1.3])
    def test_maxwellian_against_quadrature(self, maxwellian, eta):
        ref = fourier_by_quadrature(maxwellian, eta)
        got = profile_fourier(maxwellian, eta)
        assert abs(got - ref) <= 1e-10 * abs(ref) + 1e-15

    @pytest.mark.parametrize("eta", [0.05, 0.2, 0.4, 0.9])
    def test_two_stream_against_quadrature(self, eta):
        prof = VelocityProfile.two_stream(1.0, 2.0)
        expected = math.exp(-2 * math.pi**2 * eta**2) * math.cos(4 * math.pi * eta)
        assert profile_fourier(prof, eta) == pytest.approx(expected, rel=1e-13, abs=1e-15)
        assert abs(fourier_by_quadrature(prof, eta) - expected) < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(eta=st.floats(-3, 3), T=st.floats(0.2, 4.0))
    def test_maxwellian_closed_form_property(self, eta, T):
        prof = VelocityProfile.maxwellian(T)
        ref = fourier_by_quadrature(prof, eta)
        assert abs(profile_fourier(prof, eta) - ref) <= 1e-10 * max(abs(ref), 1e-5)

    def test_shift_changes_phase_only(self, maxwellian):
        eta = np.linspace(-2, 2, 41)
        moved = maxwellian.shifted(0.7)
        np.testing.assert_allclose(np.abs(profile_fourier(moved, eta)), profile_fourier(maxwellian, eta), atol=1e-15)

    def test_tabulated_unresolved_tail(self):
        v = np.linspace(-6, 6, 121)
        prof = VelocityProfile.tabulated(v, np.exp(-v * v / 2))
        assert abs(profile_fourier(prof, 0.3) - math.exp(-2 * math.pi**2 * 0.09)) < 1e-6
        with pytest.warns(UnresolvedTailWarning):
            out = profile_fourier(prof, np.array([0.1, 20.0]))
        assert np.isnan(out[1]) and np.isfinite(out[0])


class TestMarginal:
    def test_maxwellian_peak(self, maxwellian):
        assert profile_marginal(maxwellian, 1, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    def test_evenness(self, maxwellian):
        z = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(profile_marginal(maxwellian, -1, z), profile_marginal(maxwellian, 1, z))

    def test_two_stream_bump(self):
        prof = VelocityProfile.two_stream(0.05, 2.0)
        h = 1e-4
        z = np.array([1.95, 2.05])
        dphi = (profile_marginal(prof, 1, z + h) - profile_marginal(prof, 1, z - h)) / (2 * h)
        # rising before the bump: z phi' > 0, which breaks the monotone condition
        assert dphi[0] > 0 > dphi[1]
        assert z[0] * dphi[0] > 0

    def test_k_zero_rejected(self, maxwellian):
        with pytest.raises(InvalidArgument):
            profile_marginal(maxwellian, 0, 1.0)


class TestInteraction:
    def test_coefficients(self):
        rep = Interaction.coulomb()
        assert potential_coeff(rep, 0) == 0.0
        assert potential_coeff(rep, 2) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
        assert potential_coeff(Interaction.coulomb(sign=ATTRACTIVE), 1) == pytest.approx(-1 / math.pi, rel=1e-15)

    @given(k=st.integers(-500, 500), A=st.floats(0.01, 10), gamma=st.floats(1, 4))
    def test_even_and_bounded(self, k, A, gamma):
        inter = Interaction(A=A, gamma=gamma)
        w = potential_coeff(inter, k)
        assert w == potential_coeff(inter, -k)
        if k != 0:
            assert abs(w) * abs(k) ** (1 + gamma) == pytest.approx(A, rel=1e-12)

    def test_tabulated_decay_check(self, tmp_path):
        path = tmp_path / "w.csv"
        write_two_column_csv(path, ("k", "W"), [1, 2, 3], [0.3, 0.05, 0.01])
        inter = Interaction.from_csv(path, gamma=1.0)
        assert inter.A == pytest.approx(0.3)
        assert potential_coeff(inter, -2) == 0.05
        assert potential_coeff(inter, 7) == 0.0
        with pytest.raises(InvalidArgument):
            Interaction.from_csv(path, gamma=1.0, A=0.1)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            Interaction(gamma=0.5)
        with pytest.raises(InvalidArgument):
            Interaction(sign=0)


class TestGrid:
    def test_power_of_two(self):
        with pytest.raises(InvalidArgument):
            PhaseSpaceGrid(n_x=12)
        with pytest.raises(InvalidArgument):
            PhaseSpaceGrid(n_v=4)

    def test_default_cutoff_tail(self, maxwellian):
        g = PhaseSpaceGrid.for_profile(maxwellian)
        assert g.V == pytest.approx(6.0)
        assert g.tail_mass(maxwellian) < 1e-8
        assert g.recurrence_time == pytest.approx(512 / 12)


class TestSampleInitial:
    def test_homogeneous(self, maxwellian, bench_grid):
        s = equilibrium_state(maxwellian, bench_grid)
        assert np.all(s.values == s.values[0])
        np.testing.assert_array_equal(s.density_modes()[1:], 0)

    def test_mode_amplitude(self, maxwellian, bench_grid):
        s = sample_initial(maxwellian, [(1, 1e-3)], bench_grid)
        assert abs(s.density_modes()[1]) == pytest.approx(5e-4, rel=1e-10)

    def test_negativity_reported(self, maxwellian, bench_grid):
        with pytest.raises(InvalidArgument, match="negative at node"):
            sample_initial(maxwellian, [(1, 3.0)], bench_grid)

    @settings(max_examples=25, deadline=None)
    @given(modes=st.lists(st.tuples(st.integers(1, 8), st.floats(-0.1, 0.1)), max_size=4))
    def test_mass_is_one(self, maxwellian, bench_grid, modes):
        # the default cutoff V = 6 drops the profile's tail mass, about 2e-9
        s = sample_initial(maxwellian, modes, bench_grid)
        assert s.mass() == pytest.approx(1.0, abs=2 * bench_grid.tail_mass(maxwellian))
        wide = PhaseSpaceGrid(n_x=32, n_v=512, V=8.0)
        assert sample_initial(maxwellian, modes, wide).mass() == pytest.approx(1.0, rel=1e-12)

    def test_hermitian_symmetry(self, maxwellian, bench_grid, rng):
        s = sample_initial(maxwellian, [(1, 0.05), (3, 0.02)], bench_grid)
        s = DistributionState(bench_grid, s.values * (1 + 0.01 * rng.standard_normal(s.values.shape)))
        full = s.fhat_full
        neg = full[(-np.arange(bench_grid.n_x)) % bench_grid.n_x]
        np.testing.assert_allclose(neg, np.conj(full), atol=1e-16)


class TestForceField:
    def test_homogeneous_is_zero(self, maxwellian, bench_grid, coulomb):
        F = force_field(equilibrium_state(maxwellian, bench_grid), coulomb)
        assert np.max(np.abs(F)) < 1e-15

    def test_single_mode(self, maxwellian, bench_grid, coulomb):
        eps = 1e-2
        s = sample_initial(maxwellian, [(1, eps)], bench_grid)
        F, residue = force_field(s, coulomb, return_residue=True)
        np.testing.assert_allclose(F, 2 * eps * np.sin(2 * np.pi * bench_grid.x), atol=1e-13)
        assert residue < 1e-13

    def test_direct_convolution(self, maxwellian, bench_grid, coulomb):
        # W(x) = sum_k A/k^2 e^{2 i pi k x} = 2 pi^2 A (x^2 - x + 1/6) on [0, 1); W' jumps at 0,
        # so integrate over the lag d = x - y in [0, 1] where it is smooth
        s = sample_initial(maxwellian, [(1, 0.02), (2, 0.01)], bench_grid)
        rk = s.density_modes()

        def rho(y):
            return rk[0].real + 2 * sum((rk[k] * np.exp(2j * np.pi * k * y)).real for k in range(1, 4))

        d = np.linspace(0, 1, 4001)
        dW = coulomb.A * 2 * np.pi**2 * (2 * d - 1)
        direct = [-np.trapezoid(dW * rho(x - d), d) for x in bench_grid.x[::4]]
        np.testing.assert_allclose(direct, force_field(s, coulomb)[::4], atol=1e-7)

    def test_sign_flip(self, maxwellian, bench_grid, coulomb):
        s = sample_initial(maxwellian, [(1, 0.01), (3, 0.02)], bench_grid)
        np.testing.assert_array_equal(force_field(s, coulomb.flipped()), -force_field(s, coulomb))

    def test_nan_rejected(self, bench_grid, coulomb):
        vals = np.ones((bench_grid.n_x, bench_grid.n_v))
        vals[3, 4] = np.nan
        with pytest.raises(NumericalFailure):
            force_field(DistributionState(bench_grid, vals), coulomb)
