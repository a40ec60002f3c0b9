import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mirrornet import gaussian as G
from mirrornet.gaussian import DiagonalGaussian


def t(*v):
    return torch.tensor(v, dtype=torch.float64)


def test_log_prob_standard_normal_at_mode():
    g = DiagonalGaussian(t(0.0), t(1.0))
    assert G.log_prob_diag(t(0.0), g).item() == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert G.log_prob_diag(t(0.0), g).item() == pytest.approx(-0.918939, abs=1e-6)


def test_log_prob_quadratic_vanishes_at_mean():
    mu = torch.randn(5, dtype=torch.float64)
    g = DiagonalGaussian(mu, torch.ones(5, dtype=torch.float64))
    assert G.log_prob_diag(mu, g).item() == pytest.approx(-2.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_prob_matches_quadrature_normalized_density():
    # integrate the density to confirm normalization, then evaluate at x = 1
    g = DiagonalGaussian(t(0.0), t(4.0))
    xs = np.linspace(-40, 40, 400001)
    dens = np.exp(G.log_prob_elementwise(torch.from_numpy(xs), DiagonalGaussian(
        torch.zeros(len(xs), dtype=torch.float64), torch.full((len(xs),), 4.0, dtype=torch.float64))).numpy())
    assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-9)
    expected = -0.5 * (math.log(8 * math.pi) + 0.25)
    assert G.log_prob_diag(t(1.0), g).item() == pytest.approx(expected, abs=1e-12)


def test_kl_examples():
    assert G.kl_to_standard_normal(DiagonalGaussian(torch.zeros(4, dtype=torch.float64),
                                                    torch.ones(4, dtype=torch.float64))).item() == 0.0
    assert G.kl_to_standard_normal(DiagonalGaussian(t(1.0), t(1.0))).item() == pytest.approx(0.5, abs=1e-12)
    assert G.kl_to_standard_normal(DiagonalGaussian(t(0.0), t(2.0))).item() == pytest.approx(
        0.5 * (2 - 1 - math.log(2)), abs=1e-12)
    assert 0.5 * (2 - 1 - math.log(2)) == pytest.approx(0.153426, abs=1e-6)


@pytest.mark.parametrize("mu,var,expected", [(1.0, 1.0, 0.5), (0.0, 2.0, 0.5 * (1 - math.log(2)))])
def test_kl_examples_against_monte_carlo(mu, var, expected):
    g = DiagonalGaussian(t(mu), t(var))
    eps = torch.randn(10**6, 1, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    x = mu + eps * math.sqrt(var)
    batch = DiagonalGaussian(torch.full_like(x, mu), torch.full_like(x, var))
    std = DiagonalGaussian(torch.zeros_like(x), torch.ones_like(x))
    mc = (G.log_prob_elementwise(x, batch) - G.log_prob_elementwise(x, std)).mean().item()
    assert mc == pytest.approx(expected, rel=0.01)


def test_sample_reparam_examples():
    g = DiagonalGaussian(t(1.0, 2.0), t(4.0, 9.0))
    assert torch.equal(G.sample_reparam(g, t(1.0, -1.0)), t(3.0, -1.0))
    assert torch.equal(G.sample_reparam(g, t(0.0, 0.0)), g.mean)
    eps = torch.randn(6, dtype=torch.float64)
    std = DiagonalGaussian(torch.zeros(6, dtype=torch.float64), torch.ones(6, dtype=torch.float64))
    assert torch.equal(G.sample_reparam(std, eps), eps)


def test_contract_violations():
    with pytest.raises(ValueError):
        DiagonalGaussian(torch.zeros(3), torch.ones(4))
    g = DiagonalGaussian(torch.zeros(3), torch.ones(3))
    with pytest.raises(ValueError):
        G.log_prob_diag(torch.zeros(2), g)
    with pytest.raises(ValueError):
        G.sample_reparam(g, torch.zeros(2))
    bad = DiagonalGaussian.__new__(DiagonalGaussian)
    object.__setattr__(bad, "mean", torch.zeros(2))
    object.__setattr__(bad, "variance", torch.tensor([1.0, 0.0]))
    with pytest.raises(ValueError):
        G.kl_to_standard_normal(bad)
    with pytest.raises(ValueError):
        G.log_prob_diag(torch.zeros(2), bad)


def test_logvar_clamp_keeps_variance_positive_and_finite():
    lv = torch.tensor([-1e6, -50.0, -10.0, 0.0, 10.0, 50.0, 1e6])
    g = DiagonalGaussian.from_logvar(torch.zeros(7), lv)
    assert torch.all(g.variance > 0) and torch.all(torch.isfinite(g.variance))
    assert g.variance.min().item() == pytest.approx(math.exp(G.LOGVAR_MIN), rel=1e-6)
    assert g.variance.max().item() == pytest.approx(math.exp(G.LOGVAR_MAX), rel=1e-6)
    assert torch.isfinite(G.kl_to_standard_normal(g))


def test_event_ndim_reduction_and_mask():
    g = DiagonalGaussian(torch.zeros(2, 3, 4, dtype=torch.float64), torch.ones(2, 3, 4, dtype=torch.float64))
    x = torch.randn(2, 3, 4, dtype=torch.float64)
    per = G.log_prob_diag(x, g, event_ndim=2)
    assert per.shape == (2,)
    assert torch.allclose(per.sum(), G.log_prob_diag(x, g))
    mask = torch.zeros(2, 3, 1, dtype=torch.float64)
    mask[:, 0] = 1
    masked = G.log_prob_diag(x, g, event_ndim=2, mask=mask)
    assert torch.allclose(masked, G.log_prob_elementwise(x, g)[:, 0].sum(-1))


@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=8).flatmap(
        lambda m: st.tuples(st.just(m), st.lists(st.floats(0.05, 6), min_size=len(m), max_size=len(m))))
)
def test_kl_nonnegative_and_zero_only_at_standard(mv):
    mu, var = (torch.tensor(v, dtype=torch.float64) for v in mv)
    kl = G.kl_to_standard_normal(DiagonalGaussian(mu, var)).item()
    assert kl >= 0
    if kl == 0:
        assert torch.all(mu == 0) and torch.allclose(var, torch.ones_like(var))


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_any_real_logvar_gives_valid_gaussian(lv):
    g = DiagonalGaussian.from_logvar(torch.zeros(1, dtype=torch.float64), torch.tensor([lv], dtype=torch.float64))
    assert g.variance.item() > 0 and math.isfinite(g.variance.item())


def _fd(f, x, h=1e-5):
    grad = torch.zeros_like(x)
    for i in range(x.numel()):
        e = torch.zeros_like(x).view(-1)
        e[i] = h
        e = e.view_as(x)
        grad.view(-1)[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    gen = torch.Generator().manual_seed(seed)
    d = 6
    mu = (torch.rand(d, generator=gen, dtype=torch.float64) * 4 - 2).requires_grad_()
    sd = (torch.rand(d, generator=gen, dtype=torch.float64) * 1.5 + 0.5).requires_grad_()
    x = torch.randn(d, generator=gen, dtype=torch.float64)

    def lp(m, s):
        return G.log_prob_diag(x, DiagonalGaussian(m, s ** 2))

    def kl(m, s):
        return G.kl_to_standard_normal(DiagonalGaussian(m, s ** 2))

    for f in (lp, kl):
        gm, gs = torch.autograd.grad(f(mu, sd), (mu, sd))
        with torch.no_grad():
            assert torch.allclose(gm, _fd(lambda m: f(m, sd), mu), atol=1e-6, rtol=0)
            assert torch.allclose(gs, _fd(lambda s: f(mu, s), sd), atol=1e-6, rtol=0)
