import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flimdeconv import (
    ComplexSample,
    DomainError,
    Fluorophore,
    ModulationSpec,
    mixture_sample,
    modulation_lifetime,
    phase_lifetime,
    single_exponential_phasor,
    lifetime_map,
)

MOD80 = ModulationSpec(80.0)

# 40-digit mpmath evaluation of the closed form at 80 MHz
G_1NS, S_1NS = 0.7983000215933971765, 0.4012693573117423805
G_2NS, S_2NS = 0.4973522234203286196, 0.4999929892300332482
MIX_RE, MIX_IM = 1.2956522450137257961, 0.9012623465417756287
TAU_PHI_MIX = 1.3838624332527280899
TAU_M_MIX = 1.5484263202560549118

lifetimes = st.floats(min_value=0.0, max_value=100.0, allow_nan=False)
positive_lifetimes = st.floats(min_value=0.01, max_value=100.0)
freqs = st.sampled_from([20.0, 40.0, 80.0, 160.0])


def test_angular_frequency():
    assert MOD80.angular_frequency == pytest.approx(2 * math.pi * 0.08, rel=1e-12)


@pytest.mark.parametrize("f", [0.0, -5.0, float("nan")])
def test_modulation_spec_rejects_bad_frequency(f):
    with pytest.raises(DomainError):
        ModulationSpec(f)


def test_fluorophore_validation():
    with pytest.raises(DomainError):
        Fluorophore(-1.0)
    with pytest.raises(DomainError):
        Fluorophore(1.0, -0.5)


def test_apex():
    tau = 1.0 / MOD80.angular_frequency
    g, s = single_exponential_phasor(tau, MOD80)
    assert g == pytest.approx(0.5, abs=1e-15)
    assert s == pytest.approx(0.5, abs=1e-15)


def test_zero_lifetime():
    assert single_exponential_phasor(0.0, MOD80) == (1.0, 0.0)


def test_one_ns_at_80mhz():
    g, s = single_exponential_phasor(1.0, MOD80)
    assert g == pytest.approx(G_1NS, abs=1e-14)
    assert s == pytest.approx(S_1NS, abs=1e-14)


def test_negative_lifetime_rejected():
    with pytest.raises(DomainError):
        single_exponential_phasor(-0.1, MOD80)


def test_array_input():
    g, s = single_exponential_phasor(np.array([1.0, 2.0]), MOD80)
    np.testing.assert_allclose(g, [G_1NS, G_2NS], atol=1e-14)
    np.testing.assert_allclose(s, [S_1NS, S_2NS], atol=1e-14)


@given(lifetimes, freqs)
def test_semicircle(tau, f):
    g, s = single_exponential_phasor(tau, ModulationSpec(f))
    assert abs((g - 0.5) ** 2 + s * s - 0.25) < 1e-9
    assert 0 <= g <= 1 and 0 <= s <= 0.5


@given(lifetimes, lifetimes)
def test_g_monotone_in_tau(a, b):
    lo, hi = sorted((a, b))
    assert single_exponential_phasor(hi).g <= single_exponential_phasor(lo).g


def test_mixture_single_and_empty():
    assert mixture_sample([], MOD80) == (0.0, 0.0)
    g, s = single_exponential_phasor(1.0, MOD80)
    assert mixture_sample([Fluorophore(1.0, 1.0)], MOD80) == (g, s)


def test_mixture_two_emitters():
    re, im = mixture_sample([Fluorophore(1.0), Fluorophore(2.0)], MOD80)
    assert re == pytest.approx(MIX_RE, abs=1e-14)
    assert im == pytest.approx(MIX_IM, abs=1e-14)


def test_phase_lifetime_apex():
    assert phase_lifetime(ComplexSample(0.5, 0.5), MOD80) == pytest.approx(1 / MOD80.angular_frequency)


def test_phase_lifetime_of_mixture_is_not_the_mean():
    tau = phase_lifetime(mixture_sample([Fluorophore(1.0), Fluorophore(2.0)], MOD80), MOD80)
    assert tau == pytest.approx(TAU_PHI_MIX, abs=1e-12)
    assert tau < 1.5


def test_phase_lifetime_undefined_for_nonpositive_re():
    assert math.isnan(phase_lifetime(ComplexSample(0.0, 0.3), MOD80))
    assert math.isnan(phase_lifetime(ComplexSample(-1e-3, 0.3), MOD80))


@pytest.mark.parametrize("f", [20.0, 80.0, 160.0])
@pytest.mark.parametrize("tau", [0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
def test_phase_round_trip(tau, f):
    mod = ModulationSpec(f)
    assert phase_lifetime(single_exponential_phasor(tau, mod), mod) == pytest.approx(tau, rel=1e-9)


@given(positive_lifetimes, positive_lifetimes,
       st.floats(min_value=1e-3, max_value=10), st.floats(min_value=1e-3, max_value=10))
def test_mixture_bounds(t1, t2, a1, a2):
    if abs(t1 - t2) < 1e-6 * max(t1, t2):
        return
    tau = phase_lifetime(mixture_sample([Fluorophore(t1, a1), Fluorophore(t2, a2)]))
    assert min(t1, t2) < tau < max(t1, t2)


@given(positive_lifetimes, positive_lifetimes, st.floats(min_value=1e-3, max_value=1e3))
def test_magnitude_scaling(t1, t2, c):
    base = [Fluorophore(t1, 1.0), Fluorophore(t2, 0.3)]
    scaled = [Fluorophore(t1, c), Fluorophore(t2, 0.3 * c)]
    re0, im0 = mixture_sample(base)
    re1, im1 = mixture_sample(scaled)
    assert re1 == pytest.approx(c * re0, rel=1e-12)
    assert im1 == pytest.approx(c * im0, rel=1e-12)
    assert phase_lifetime((re1, im1)) == pytest.approx(phase_lifetime((re0, im0)), rel=1e-12)


@given(st.lists(st.tuples(lifetimes, st.floats(min_value=0, max_value=10)), max_size=5))
def test_physical_mixtures_non_negative(pairs):
    re, im = mixture_sample([Fluorophore(t, a) for t, a in pairs])
    assert re >= 0 and im >= 0


class TestModulationLifetime:
    def test_apex(self):
        assert modulation_lifetime((0.5, 0.5), MOD80) == pytest.approx(1 / MOD80.angular_frequency, rel=1e-12)

    def test_single_exponential(self):
        sample = single_exponential_phasor(1.0, MOD80)
        assert modulation_lifetime(sample, MOD80) == pytest.approx(1.0, rel=1e-12)

    def test_mixture_exceeds_phase_lifetime(self):
        sample = mixture_sample([Fluorophore(1.0), Fluorophore(2.0)], MOD80)
        tau_m = modulation_lifetime(sample, MOD80, amplitude=2.0)
        assert tau_m == pytest.approx(TAU_M_MIX, rel=1e-12)
        assert tau_m > TAU_PHI_MIX

    @pytest.mark.parametrize("sample", [(0.0, 0.0), (1.0, 0.5)])
    def test_out_of_range_depth(self, sample):
        assert math.isnan(modulation_lifetime(sample, MOD80))


def test_lifetime_map_masks_dim_pixels():
    re = np.array([[1.0, 1e-9, 0.0, 0.5]])
    im = np.array([[0.5, 1e-9, 0.1, 0.5]])
    tau = lifetime_map(re, im, MOD80)
    assert np.isfinite(tau[0, 0]) and np.isfinite(tau[0, 3])
    assert np.isnan(tau[0, 1]) and np.isnan(tau[0, 2])
    assert tau[0, 3] == pytest.approx(1 / MOD80.angular_frequency)
