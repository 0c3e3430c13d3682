import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bogodisp.grid import (
    Field,
    GridError,
    apply_multiplier,
    convolve,
    field_norms,
    fourier_transform,
    free_propagator_symbol,
    gaussian,
    make_grid,
)


@pytest.mark.parametrize("n", [6, 100, 4, 16384])
def test_rejects_bad_point_counts(n):
    with pytest.raises(GridError):
        make_grid(1, n, 10.0)


def test_rejects_bad_dimension_and_length():
    with pytest.raises(GridError):
        make_grid(4, 16, 10.0)
    with pytest.raises(GridError):
        make_grid(1, 16, 0.0)


def test_coordinates_centred():
    g = make_grid(1, 16, 8.0)
    assert g.x[8] == 0.0
    assert g.x[0] == -4.0
    assert np.isclose(g.k_max, np.pi * 16 / 8.0)


def test_field_shape_checked():
    g = make_grid(2, 8, 1.0)
    with pytest.raises(GridError):
        Field(g, np.zeros(8))


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 32), elements=finite))
def test_parseval_and_roundtrip(a):
    g = make_grid(1, 32, 5.0)
    f = Field(g, a[0] + 1j * a[1])
    fh = fourier_transform(f)
    assert np.isclose(np.sum(np.abs(fh.values) ** 2), np.sum(np.abs(f.values) ** 2), rtol=1e-12, atol=1e-9)
    back = fourier_transform(fh, "inverse")
    assert np.allclose(back.values, f.values, atol=1e-12)


def test_bad_direction():
    g = make_grid(1, 8, 1.0)
    with pytest.raises(ValueError):
        fourier_transform(Field(g, np.zeros(8)), "sideways")


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_free_propagator_group_law(t1, t2):
    g = make_grid(1, 64, 20.0)
    f = gaussian(g, 1.3, k0=0.7)
    a = apply_multiplier(apply_multiplier(f, free_propagator_symbol(g, t1)), free_propagator_symbol(g, t2))
    b = apply_multiplier(f, free_propagator_symbol(g, t1 + t2))
    assert np.allclose(a.values, b.values, atol=1e-12)
    assert np.isclose(a.l2(), 1.0)


def test_callable_symbol_matches_array():
    g = make_grid(2, 16, 6.0)
    f = gaussian(g, 1.0)
    a = apply_multiplier(f, lambda k1, k2: np.exp(-(k1**2 + k2**2)))
    b = apply_multiplier(f, np.exp(-g.k2))
    assert np.allclose(a.values, b.values)


def test_gaussian_norms():
    a = 1.5
    g = make_grid(1, 512, 60.0)
    f = gaussian(g, a)
    nrm = field_norms(f)
    assert np.isclose(nrm["l2"], 1.0)
    # ||f'||^2 = 1/(2a^2) and ||f''||^2 = 3/(4a^4) for the normalised Gaussian
    assert np.isclose(nrm["h1"] ** 2, 1 + 1 / (2 * a * a), rtol=1e-10)
    assert np.isclose(nrm["h2"] ** 2, 1 + 2 / (2 * a * a) + 3 / (4 * a**4), rtol=1e-10)
    assert np.isclose(nrm["linf"], (np.pi * a * a) ** -0.25, rtol=1e-10)


def test_convolve_with_constant():
    g = make_grid(1, 128, 16.0)
    v = Field(g, np.where(np.abs(g.x) <= 1, 1.0 - g.x**2, 0.0))
    one = Field(g, np.ones(g.n))
    out = convolve(v, one)
    assert np.allclose(out.values, g.w * v.values.sum())
    assert np.isrealobj(out.values)


def test_convolve_matches_direct_sum():
    g = make_grid(1, 32, 8.0)
    rng = np.random.default_rng(0)
    v = Field(g, rng.standard_normal(g.n))
    f = Field(g, rng.standard_normal(g.n) + 1j * rng.standard_normal(g.n))
    n = g.n
    direct = np.array([g.w * sum(v.values[(i - j + n // 2) % n] * f.values[j] for j in range(n)) for i in range(n)])
    assert np.allclose(convolve(v, f).values, direct)


def test_convolve_grid_mismatch():
    a = make_grid(1, 16, 1.0)
    b = make_grid(1, 16, 2.0)
    with pytest.raises(GridError):
        convolve(Field(a, np.zeros(16)), Field(b, np.zeros(16)))
