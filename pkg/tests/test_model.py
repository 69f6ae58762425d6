import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctlab.model import (TWO_PI, DisorderLaw, build_free, build_kuramoto, build_probe,
                            cosine_bump, model_from_config, sample_populations, separable_error,
                            sup_gamma_sample, uniform_circle, von_mises)
from fluctlab.testfns import (CustomFn1, TestFn1, TestFn2, as_general, constant, one2, separable,
                              sin_theta)

angles = st.floats(-20.0, 20.0, allow_nan=False)


def test_kuramoto_examples():
    m = build_kuramoto(K=1.0, sigma=0.5)
    assert m.drift_c(1.3, 0.7) == pytest.approx(0.7)
    assert m.gamma(0.0, 0.0, math.pi / 2, 0.0) == pytest.approx(1.0)
    assert m.is_circle and m.gamma_bound == 1.0


@given(angles, st.floats(-3, 3), st.floats(0, 5))
def test_kuramoto_diagonal_and_antisymmetry(th, om, K):
    m = build_kuramoto(K=K)
    assert m.gamma(th, om, th, om) == 0.0
    th2 = th * 0.37 + 1.0
    assert m.gamma(th, om, th2, om) == pytest.approx(-m.gamma(th2, om, th, om), abs=1e-12)


def test_probe_examples():
    m = build_probe(2.5)
    assert np.all(m.gamma(np.arange(3.0), 0, 1.0, 2.0) == 2.5)
    assert np.all(m.drift_c(np.arange(3.0), 1.0) == 0.0)
    line = build_probe(1.0, state_space="line")
    assert not line.is_circle


@pytest.mark.parametrize("model", [build_kuramoto(1.7, 0.3), build_probe(-0.4), build_free(1.0)])
def test_separable_reconstruction(model):
    assert separable_error(model, 10_000, np.random.default_rng(0)) <= 1e-12


@pytest.mark.parametrize("model", [build_kuramoto(1.7, 0.3, DisorderLaw.symmetric_pair(1.0)),
                                   build_probe(-0.4)])
def test_boundedness_audit(model):
    assert sup_gamma_sample(model, 10_000, np.random.default_rng(1)) <= model.gamma_bound + 1e-15


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build_kuramoto(1.0, sigma=-1.0)
    with pytest.raises(ValueError):
        DisorderLaw((0.0, 1.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        cosine_bump(1.5)
    with pytest.raises(ValueError):
        sample_populations(build_kuramoto(), 0, np.random.default_rng(0))


def test_sample_populations_uniform_lln():
    count = 100_000
    th, om = sample_populations(build_kuramoto(), count, np.random.default_rng(5))
    assert abs(np.mean(np.sin(th))) <= 3 / math.sqrt(count)
    assert np.all(om == 0.0)
    assert np.all((th >= 0) & (th < TWO_PI))


def test_sample_populations_deterministic():
    m = build_kuramoto(1.0, 1.0, DisorderLaw.symmetric_pair(0.5))
    a = sample_populations(m, 50, np.random.default_rng(9))
    b = sample_populations(m, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert set(np.unique(a[1])) <= {-0.5, 0.5}


@pytest.mark.parametrize("law", [uniform_circle(), von_mises(2.0), cosine_bump(0.8)])
def test_initial_density_normalised(law):
    th = (np.arange(4096) + 0.5) * TWO_PI / 4096
    assert np.sum(law.density(th)) * TWO_PI / 4096 == pytest.approx(1.0, rel=1e-10)


def test_cosine_bump_sampler_matches_density():
    th = cosine_bump(0.6).sample(200_000, np.random.default_rng(2))
    # E cos = a/2
    assert np.mean(np.cos(th)) == pytest.approx(0.3, abs=4 / math.sqrt(th.size))


def test_model_from_config():
    m = model_from_config("kuramoto", K=0.5, sigma=0.2, disorder="pair:1.5", initial="vonmises:3")
    assert m.params["K"] == 0.5
    assert m.disorder_law.values == (-1.5, 1.5)
    assert m.initial_law.name.startswith("vonmises")
    with pytest.raises(KeyError):
        model_from_config("fitzhugh")
    with pytest.raises(ValueError):
        model_from_config("kuramoto", disorder="gamma:2")


def test_scaled_model():
    m = build_kuramoto(1.0).scaled(-2.0)
    assert m.gamma(0.0, 0.0, math.pi / 2, 0.0) == pytest.approx(-2.0)
    assert m.gamma_bound == 2.0
    assert separable_error(m, 1000, np.random.default_rng(0)) <= 1e-12


# test functions

fns = st.sampled_from([TestFn1("sin", k=1), TestFn1("cos", k=3), TestFn1("sin", k=2, x_part="cos", ell=2),
                       TestFn1("cos", k=1, omega_coeffs=(1.0, 0.5)), TestFn1("poly", theta_coeffs=(0.0, 1.0, -0.5))])


@given(fns, angles, st.floats(-2, 2), st.floats(-0.5, 0.5))
def test_testfn_derivatives_by_finite_difference(f, th, om, x):
    h = 1e-5
    fd1 = (f(th + h, om, x) - f(th - h, om, x)) / (2 * h)
    fd2 = (f(th + h, om, x) - 2 * f(th, om, x) + f(th - h, om, x)) / h**2
    assert f.grad(th, om, x) == pytest.approx(fd1, abs=1e-6 * (1 + abs(fd1)))
    assert f.lap(th, om, x) == pytest.approx(fd2, abs=1e-3)


@given(st.sampled_from(["sin", "cos"]), st.integers(1, 5), angles)
def test_periodic_testfns(part, k, th):
    f = TestFn1(part, k=k)
    assert f.periodic
    assert f(th + TWO_PI, 0.0, 0.0) == pytest.approx(f(th, 0.0, 0.0), abs=1e-12)


def test_testfn_ids_and_flags():
    assert sin_theta().id == "sin1t"
    assert constant().id == "one"
    assert constant().theta_free and constant().x_free
    assert not TestFn1("poly", theta_coeffs=(1.0, 1.0)).periodic
    with pytest.raises(ValueError):
        TestFn1("tan")
    with pytest.raises(ValueError):
        CustomFn1(lambda th, om, x: th).grad(0.0, 0.0, 0.0)


def test_two_variable_functions():
    g = separable(sin_theta(), TestFn1("cos", k=2))
    args = (0.3, 0.0, 0.1, 1.1, 0.0, -0.2)
    assert g(*args) == pytest.approx(math.sin(0.3) * math.cos(2.2))
    assert g.grad1(*args) == pytest.approx(math.cos(0.3) * math.cos(2.2))
    assert g.grad2(*args) == pytest.approx(-2 * math.sin(0.3) * math.sin(2.2))
    gen = as_general(g)
    assert not gen.separable and gen(*args) == g(*args)
    assert one2()(*args) == 1.0
    with pytest.raises(ValueError):
        TestFn2(left=sin_theta())
