import math

import numpy as np
import pytest

from conftest import band_limited
from lowreg.operators import (OperatorExpr, abs_grad, d_x, delta, i_delta,
                              sqrt_shift)
from lowreg.spectral import (Field, Grid, apply_operator, commutator,
                             multilinear, phi_filter, phi_values,
                             pointwise_apply, registered, rough_data,
                             semigroup, smooth_data, sobolev_norm)
from lowreg.equations import Monomial


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(24)  # periodic needs a power of two
    with pytest.raises(ValueError):
        Grid(32, "hexagonal")
    Grid(24, "dirichlet")  # sine basis has no such constraint


@pytest.mark.parametrize("basis,n", [("periodic", 64), ("dirichlet", 63)])
def test_transform_roundtrip(basis, n):
    grid = Grid(n, basis)
    rng = np.random.default_rng(0)
    vals = rng.normal(size=n) + 1j * rng.normal(size=n)
    f = Field.from_values(grid, vals)
    assert np.abs(grid.to_values(f.coeffs) - vals).max() < 1e-13 * np.abs(vals).max()


def test_parseval(grid64):
    f = rough_data(1.0, 5, grid64)
    vals_norm = math.sqrt(float(np.mean(np.abs(f.values) ** 2)) * grid64.length)
    assert abs(f.norm() - vals_norm) < 1e-13


def test_single_mode_norm(grid64):
    e1 = Field.from_values(grid64, np.exp(1j * grid64.x))
    assert abs(e1.norm() - math.sqrt(2 * np.pi)) < 1e-12
    assert abs(e1.norm(1.0) - math.sqrt(2 * np.pi) * 2 ** 0.5) < 1e-12
    assert abs(sobolev_norm(2.0, e1) - math.sqrt(2 * np.pi) * 2.0) < 1e-12


def test_apply_operator(grid64):
    e1 = Field.from_values(grid64, np.exp(1j * grid64.x))
    assert np.abs((apply_operator(delta(), e1) + e1).coeffs).max() < 1e-13
    const = Field.constant(grid64, 2.0)
    shifted = apply_operator(OperatorExpr.make({sqrt_shift(3): 1}), const)
    assert np.abs(shifted.values - 6.0).max() < 1e-12
    f = band_limited(grid64, 1)
    mixed = apply_operator(i_delta() + d_x(), f)
    parts = apply_operator(i_delta(), f) + apply_operator(d_x(), f)
    assert (mixed - parts).norm() < 1e-13


def test_dx_rejected_on_sine_basis():
    grid = Grid(16, "dirichlet")
    f = Field.from_values(grid, np.sin(grid.x / 2))
    with pytest.raises(ValueError):
        apply_operator(d_x(), f)


def test_semigroup_properties(grid64):
    f = rough_data(2.0, 7, grid64)
    ld = i_delta()
    mode = Field.from_values(grid64, 0.3 * np.exp(2j * grid64.x))
    stepped = semigroup(ld, 0.25, mode)
    assert np.abs(stepped.coeffs[2] - 0.3 * np.exp(-1j * 0.25 * 4)) < 1e-13
    assert (semigroup(ld, 0.0, f) - f).norm() < 1e-14
    assert abs(semigroup(ld, 0.37, f).norm() - f.norm()) < 1e-12  # isometry
    ab = semigroup(ld, 0.2, semigroup(ld, 0.3, f))
    assert (ab - semigroup(ld, 0.5, f)).norm() < 1e-12
    with pytest.raises(ValueError):
        semigroup(delta(), -0.1, f)  # backward heat flow rejected
    semigroup(delta(), 0.1, f)  # forward is fine


def test_phi_values_and_identity():
    assert abs(phi_values(1, np.array([0.0]))[0] - 1.0) < 1e-14
    assert abs(phi_values(2, np.array([0.0]))[0] - 0.5) < 1e-14
    rng = np.random.default_rng(1)
    taus = rng.uniform(1e-12, 0.5, size=40)
    ks = rng.integers(0, 32, size=40)
    sigma = -2j * taus * ks ** 2
    resid = sigma * phi_values(2, sigma) + phi_values(1, sigma) - np.exp(sigma)
    assert np.abs(resid).max() < 1e-12
    # the small-sigma series branch joins smoothly
    sig = np.array([1e-9, 1e-3, 2e-2, 0.5]) * (1 + 1j)
    for j in (1, 2, 3):
        quad = []
        for s in sig:
            xs = np.linspace(0, 1, 20001)
            quad.append(np.trapezoid(xs ** (j - 1) * np.exp(s * xs), xs)
                        / math.factorial(j - 1))
        assert np.abs(phi_values(j, sig) - quad).max() < 1e-8


def test_phi_filter_on_field(grid64):
    const = Field.constant(grid64, 1.0)
    assert np.abs(phi_filter(1, i_delta(), 0.3, const).values - 1.0).max() < 1e-13
    assert np.abs(phi_filter(2, i_delta(), 0.3, const).values - 0.5).max() < 1e-13


def test_commutator_gradient_identity(grid64):
    # C[M_{1,2}, iΔ](w, z) = -2i ∇w·∇z
    rng = np.random.default_rng(2)
    for seed in range(6):
        w = band_limited(grid64, 10 + seed)
        z = band_limited(grid64, 40 + seed)
        got = commutator(multilinear(2), i_delta(), 1, [w, z])
        expect = (apply_operator(d_x(), w) * apply_operator(d_x(), z)).scaled(-2j)
        assert (got - expect).norm() < 1e-10


def test_commutator_on_constants(grid64):
    c1 = Field.constant(grid64, 1.3)
    c2 = Field.constant(grid64, -0.4 + 0.2j)
    for op in (delta(), d_x()):
        out = commutator(multilinear(2), op, 1, [c1, c2])
        assert out.norm() < 1e-14


def test_commutator_square_on_sine(grid64):
    v = Field.from_values(grid64, np.sin(grid64.x))
    got = commutator(registered(Monomial(1.0, 2)), delta(), 1, [v])
    expect = Field.from_values(grid64, -2.0 * np.cos(grid64.x) ** 2)
    assert (got - expect).norm() < 1e-10


def test_commutator_matches_flow_derivative(grid64):
    # C[H,L](v) ~ d/de [H(e^{eL} v) - e^{eL} H(v)] at e=0
    v = band_limited(grid64, 3, band=3, scale=0.4)
    ld = i_delta()
    h = registered(Monomial(1.0, 3))
    comm = commutator(h, ld, 1, [v])
    errs = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        fd = (pointwise_apply(lambda z: z ** 3, semigroup(ld, eps, v))
              - semigroup(ld, eps, pointwise_apply(lambda z: z ** 3, v))).scaled(1 / eps)
        errs.append((fd - comm).norm())
    assert errs[2] < errs[0]
    assert errs[2] < 0.02 * max(comm.norm(), 1e-9)


def test_rough_data_properties(grid64):
    f = rough_data(1.0, 42, grid64)
    assert abs(f.norm(1.0) - 1.0) < 1e-10
    again = rough_data(1.0, 42, grid64)
    assert np.array_equal(f.coeffs, again.coeffs)
    # H^2 mass grows under refinement: proxy for non-membership
    g128 = Grid(128)
    h2_small = rough_data(1.0, 42, grid64).norm(2.0)
    h2_big = rough_data(1.0, 42, g128).norm(2.0)
    assert h2_big >= 1.4 * h2_small
    real = rough_data(1.5, 9, grid64, real=True)
    assert np.abs(real.values.imag).max() < 1e-12
    with pytest.raises(ValueError):
        rough_data(-1.0, 0, grid64)


def test_pointwise_and_dealiasing(grid64):
    zero = Field.zero(grid64)
    assert pointwise_apply(np.sin, zero).norm() < 1e-14
    # (u^2) ū against a padded-FFT oracle, u band-limited so the cubic
    # product fits inside the 2/3 cutoff
    u = band_limited(grid64, 11, band=6)
    prod = (u * u) * u.conj()
    big = Grid(256)
    ub = Field.from_coeffs(big, np.zeros(256, complex))
    k64 = np.fft.fftfreq(64, 1 / 64).astype(int)
    cb = np.zeros(256, complex)
    for i, k in enumerate(k64):
        cb[k % 256] = u.coeffs[i]
    vals = Grid(256).to_values(cb)
    exact = vals * vals * np.conj(vals)
    ce = Grid(256).to_coeffs(exact)
    got = np.zeros(256, complex)
    for i, k in enumerate(k64):
        got[k % 256] = prod.coeffs[i]
    mask = np.abs(np.fft.fftfreq(256, 1 / 256) * 256) <= 64 / 3
    assert np.abs((got - ce)[mask]).max() < 1e-12


def test_dirichlet_boundary_trace():
    grid = Grid(48, "dirichlet")
    f = rough_data(2.0, 3, grid)
    for g in (f, apply_operator(delta(), f),
              apply_operator(OperatorExpr.make({sqrt_shift(1): 1}), f)):
        # evaluate the sine series at the boundary points
        for x in (0.0, grid.length):
            series = np.sum(g.coeffs * np.sin(np.arange(1, grid.n + 1)
                                              * np.pi * x / grid.length))
            assert abs(series) < 1e-12


def test_abs_grad_symbol(grid64):
    f = band_limited(grid64, 5)
    g = apply_operator(abs_grad(), f)
    assert np.abs(g.coeffs - np.abs(grid64.k) * f.coeffs).max() < 1e-14
