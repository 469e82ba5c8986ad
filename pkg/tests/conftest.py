import numpy as np
import pytest

from lowreg.spectral import Field, Grid, rough_data, smooth_data


@pytest.fixture(scope="session")
def grid32():
    return Grid(32)


@pytest.fixture(scope="session")
def grid64():
    return Grid(64)


def band_limited(grid: Grid, seed: int, band: int = 4, scale: float = 0.3,
                 real: bool = False) -> Field:
    """Random field supported on |k| <= band; products of up to five such
    fields stay inside the dealias cutoff, so evaluation-order effects
    vanish and scheme equivalences can be tested at machine precision."""
    rng = np.random.default_rng(seed)
    c = np.zeros(grid.n, dtype=complex)
    mask = np.abs(grid.k) <= band + 0.5
    c[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    f = Field.from_coeffs(grid, scale * c)
    if real:
        f = Field.from_values(grid, f.values.real)
    return f


def gp_env(grid: Grid, seed: int = 3, scale: float = 1.5) -> dict:
    u = smooth_data(grid, seed, scale=scale)
    v = smooth_data(grid, seed + 1, scale=1.0, real=True)
    return {"v_o": u, "v_ob": u.conj(), "V_1": v}


def fit_slope(taus, errs):
    lx, ly = np.log(taus), np.log(errs)
    coeffs = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((np.polyval(coeffs, lx) - ly) ** 2)))
    return float(coeffs[0]), resid
