import numpy as np
import pytest

from crpca import linear_denoiser, operators
from crpca import state_evolution as se
from crpca.errors import ConfigError, NumericalError
from crpca.instances import generate_low_rank
from crpca.lowrank_denoiser import SpectralShrinker, denoise
from crpca.messages import MeanVarMessage
from crpca.sparse_denoiser import SparsePrior

from oracles import wishart_stieltjes

# 1e7-sample Monte Carlo of the sparse MMSE at rho = 0.05 (unit power), v = 0.1:
# mean 0.0085517, standard error 2.1e-5
MC_MSE_S = 0.0085517
MC_MSE_S_SE = 2.1e-5


def test_psi_examples():
    assert se.psi_partial_orthonormal(3.0, 1.0) == 0.0
    assert se.psi_partial_orthonormal(1.0, 0.5) == 1.0
    assert se.psi_partial_orthonormal(0.0, 0.4, 1e-5) == pytest.approx(2.5e-5)
    assert se.psi_partial_orthonormal(1e9, 0.25) / 1e9 == pytest.approx(3.0)
    with pytest.raises(ConfigError):
        se.psi_partial_orthonormal(1.0, 0.0)


def test_psi_general_unit_spectrum():
    for v in (0.1, 1.0, 5.0):
        assert se.psi_general(v, np.ones(50), 0.3, 0.01) == pytest.approx(
            se.psi_partial_orthonormal(v, 0.3, 0.01), rel=1e-12)


def test_psi_general_against_gaussian_operator():
    n1 = n2 = 32
    n = n1 * n2
    op = operators.make_gaussian(n, n, 3, n1, n2)
    s2 = 0.1
    pred = se.psi_general(1.0, op.spectrum.squared(), 1.0, s2)
    rng = np.random.default_rng(4)
    errs = []
    for _ in range(5):
        X = rng.standard_normal((n1, n2))
        y = operators.apply(op, X) + np.sqrt(s2) * rng.standard_normal(n)
        R = X + rng.standard_normal((n1, n2))
        res = linear_denoiser.lmmse_denoise(op, y, MeanVarMessage(R, 1.0), s2)
        errs.append(np.mean((res.extrinsic_mean - X) ** 2))
    assert abs(np.mean(errs) - pred) / pred < 0.05


def test_varphi_gaussian_prior_closed_form():
    theta = 2.5
    for v in (1e-3, 0.1, 1.0, 7.0):
        # MSE = theta v/(theta + v), so the extrinsic variance is exactly theta
        assert se.mse_sparse_mmse(v, SparsePrior(1.0, theta)) == pytest.approx(theta * v / (theta + v), rel=1e-8)
        assert se.varphi_mmse(v, SparsePrior(1.0, theta)) == pytest.approx(theta, rel=1e-7)


def test_varphi_small_v():
    p = SparsePrior.unit_power(0.05)
    assert se.varphi_mmse(0.0, p) == 0.0
    assert se.varphi_mmse(1e-6, p) < 1e-6


def test_sparse_mse_matches_monte_carlo():
    got = se.mse_sparse_mmse(0.1, SparsePrior.unit_power(0.05))
    assert abs(got - MC_MSE_S) <= 3 * MC_MSE_S_SE


def test_varphi_increasing():
    p = SparsePrior.unit_power(0.1)
    v = np.geomspace(1e-4, 10, 30)
    vals = se.sparse_transfer(p)(v)
    assert np.all(vals > 0) and np.all(np.diff(vals) > 0)


def test_table_transfer_behaviour(tmp_path):
    t = se.TableTransfer([1.0, 2.0], [0.5, 1.5])
    assert t(0.0) == 0.0 and t(0.5) == 0.25 and t(1.5) == 1.0 and t(9.0) == 1.5
    t.to_csv(tmp_path / "phi.csv")
    back = se.TableTransfer.from_csv(tmp_path / "phi.csv")
    assert np.array_equal(back.grid, t.grid) and np.array_equal(back.values, t.values)
    assert (tmp_path / "phi.csv").read_text().splitlines()[0] == "v,phi_v"
    with pytest.raises(ConfigError):
        se.TableTransfer([2.0, 1.0], [0.0, 1.0])
    with pytest.raises(ConfigError):
        se.TableTransfer([1.0, 2.0], [-1.0, 1.0])


def test_lowrank_table_shape():
    grid = np.arange(0.01, 2.0, 0.1)
    table = se.phi_lowrank_table(SpectralShrinker("best-rank-r", r=6), grid, 3, 128, 128, 6, seed=1)
    vals = table.values
    assert np.all(vals >= 0)
    # monotone up to Monte Carlo jitter
    assert np.all(vals[1:] >= 0.95 * vals[:-1])
    assert vals[0] / grid[0] < 0.2


@pytest.fixture(scope="module")
def smooth_sample():
    sh = SpectralShrinker("smoothed-hard", r=26, epsilon=0.05)
    return sh, {v: se.sample_spectral_measure(v, 512, 512, 26, seed=11) for v in (0.05, 0.25, 1.0)}


def test_analytic_transfer_matches_monte_carlo(smooth_sample):
    sh, samples = smooth_sample
    for v, meas in samples.items():
        an = se.phi_lowrank_analytic(v, sh, meas)
        mc = np.mean([se.phi_lowrank_point(v, sh, 512, 512, 26, seed=20 + k) for k in range(2)])
        assert abs(an - mc) / mc < 0.10, v


def test_asymptotic_mse_matches_empirical(smooth_sample):
    sh, samples = smooth_sample
    for v, meas in samples.items():
        pred = se.mse_lowrank_asymptotic(v, sh, meas)
        L = generate_low_rank(512, 512, 26, 99)
        R = L + np.sqrt(v) * np.random.default_rng(100).standard_normal(L.shape)
        emp = np.mean((denoise(MeanVarMessage(R, v), sh) - L) ** 2)
        assert pred >= 0
        assert abs(pred - emp) / emp < 0.10, v


def test_asymptotic_mse_of_zero_shrinker():
    v = 0.25
    meas = se.sample_spectral_measure(v, 128, 128, 6, seed=3)
    zero = SpectralShrinker("svst", omega=1e6)
    # the all-thresholded estimate has error |L|^2/n = 1
    assert se.mse_lowrank_asymptotic(v, zero, meas) == pytest.approx(1.0, rel=0.05)


def test_asymptotic_mse_linear_in_v():
    meas = se.sample_spectral_measure(0.3, 64, 64, 3, seed=2)
    sh = SpectralShrinker("svst", omega=1.0)
    m1 = se.mse_lowrank_asymptotic(0.3, sh, meas)
    scaled = se.SpectralMeasureSample(meas.values, 0.9, 64, 64)
    assert se.mse_lowrank_asymptotic(0.9, sh, scaled) == pytest.approx(3 * m1, rel=1e-12)


def test_identity_shrinker_is_degenerate():
    meas = se.sample_spectral_measure(0.3, 64, 64, 3, seed=2)
    with pytest.raises(NumericalError):
        se.phi_lowrank_analytic(0.3, SpectralShrinker("svst", omega=0.0), meas)


@pytest.mark.parametrize("z", [-1 + 0.01j, -2 + 0.01j])
def test_stieltjes_against_wishart(z):
    m = se.stieltjes_fixed_point(z, np.zeros(1), 1.0, 1.0)
    ref = wishart_stieltjes(2000, z, seed=5)
    assert abs(m - ref) / abs(ref) < 0.02
    assert m.imag > 0


def test_stieltjes_noise_free_limit():
    t = np.array([0.5, 1.0, 3.0])
    z = 0.7 + 0.2j
    m = se.stieltjes_fixed_point(z, t, 1e-10, 0.5)
    assert abs(m - se.empirical_stieltjes(t, z)) < 1e-6
    with pytest.raises(ConfigError):
        se.stieltjes_fixed_point(1.0 + 0j, t, 1.0, 1.0)


def test_se_origin_is_fixed(base_transfers):
    _, varphi, phi = base_transfers
    states = se.se_iterate(se.SEState(0.0, 0.0), se.linear_transfer(0.4), varphi, phi, 10)
    assert all(s.tau_S == 0 and s.tau_L == 0 for s in states)


def test_se_converges_at_forty_percent(base_transfers):
    _, varphi, phi = base_transfers
    states = se.se_iterate(se.SEState(1.0, 1.0), se.linear_transfer(0.4), varphi, phi, 60)
    total = np.array([s.tau_S + s.tau_L for s in states])
    assert np.all(np.diff(total) < 0)
    assert total[-1] < 1e-8


def test_se_stalls_below_necessary_ratio():
    from crpca.convergence import alpha_nec, log_grid
    alpha = 0.15
    grid = np.geomspace(1e-4, 2 / alpha + 2, 30)
    varphi = se.sparse_transfer(SparsePrior.unit_power(0.05), grid)
    phi = se.phi_lowrank_table(SpectralShrinker("best-rank-r", r=10), grid, 2, 200, 200, 10, seed=4)
    assert alpha < alpha_nec(varphi, phi, log_grid(grid[0], grid[-1]))
    states = se.se_iterate(se.SEState(1.0, 1.0), se.linear_transfer(alpha), varphi, phi, 500)
    assert states[-1].tau_S + states[-1].tau_L > 1e-4


def test_se_clamps_with_warning():
    t = se.TableTransfer([0.5, 1.0], [0.1, 0.2])
    with pytest.warns(RuntimeWarning):
        se.se_iterate(se.SEState(1.0, 1.0), se.linear_transfer(0.1), t, t, 1)


def test_se_csv(tmp_path):
    states = [se.SEState(1.0, 1.0), se.SEState(0.5, 0.25)]
    se.se_to_csv(states, tmp_path / "se.csv")
    assert (tmp_path / "se.csv").read_text().splitlines() == ["t,tau_S,tau_L", "0,1.0,1.0", "1,0.5,0.25"]


def test_state_validation():
    with pytest.raises(ConfigError):
        se.SEState(-1.0, 0.0)
    with pytest.raises(ConfigError):
        se.SEState(np.nan, 0.0)
