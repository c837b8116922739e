import numpy as np
import pytest
import scipy.sparse as sp

from noiseaware.design import (
    build_design,
    compute_design_matrix,
    gauge_fixed_parameters,
    gauge_map,
    model_row_covariance,
    orbit_marginalizer,
    predicted_row_values,
    reduced_matrix,
    true_parameters,
)
from noiseaware.estimate import (
    CensoringRankError,
    ExperimentData,
    estimate_noise,
    orbit_covariance,
    probability_map,
    simulate_batch,
    simulate_experiments,
    solve_log_system,
)
from noiseaware.noise import (
    NoiseParameters,
    noiseless_instance,
    sample_lognormal_instance,
    tuned_depolarizing_instance,
)
from noiseaware.pauli import channel_to_eigenvalues, eigenvalue_jacobian, pauli_labels


def exact_data(design, dm, truth, shots=10**6):
    """Row values at their expectation with the model covariance."""
    values = predicted_row_values(design, dm, truth)
    groups, covs = [], []
    for rows, cov in model_row_covariance(design, values):
        groups.append(rows)
        covs.append(cov * np.outer(values[rows], values[rows]))
    return ExperimentData(values, np.full(values.size, shots), groups, covs)


def test_exact_data_recovers_truth(design3, truth3):
    design, dm = design3
    sol = solve_log_system(design, dm, exact_data(design, dm, truth3))
    expected = np.log(gauge_fixed_parameters(design, true_parameters(design, truth3)))
    np.testing.assert_allclose(sol.log_values, expected, atol=1e-10)


def test_exact_data_gives_true_channels_in_reference_gauge(design3, char3):
    # The design gauge is taken from the reference noise, so it is exact for it.
    design, dm = design3
    truth = sample_lognormal_instance(NoiseParameters(sm=0.0, sr=0.0), char3, 7)
    est = estimate_noise(design, dm, exact_data(design, dm, truth))
    for g in design.gates:
        np.testing.assert_allclose(est.channels[g.key].errors, truth.channel(g).errors, atol=1e-9)


def test_exact_data_gives_gauge_fixed_probabilities(design3, truth3):
    design, dm = design3
    est = estimate_noise(design, dm, exact_data(design, dm, truth3), project=False)
    fixed = gauge_fixed_parameters(design, true_parameters(design, truth3))
    for g in design.gates:
        cols = [design.column_index[c] for c in design.columns if c.kind == "gate" and c.gate == g.key]
        p = np.linalg.solve(eigenvalue_jacobian(g.arity), fixed[cols] - 1)
        np.testing.assert_allclose(est.raw_probabilities[g.key], p, atol=1e-9)


@pytest.mark.parametrize("backend", ["analytic", "frame"])
def test_noiseless_truth_gives_unit_eigenvalues(design3, char3, backend):
    design, dm = design3
    data = simulate_experiments(design, dm, noiseless_instance(char3), 10**4, 0, backend=backend)
    assert np.all(data.lambda_hat == 1.0)


def test_single_experiment_binomial_spread(design3, truth3):
    design, dm = design3
    values = predicted_row_values(design, dm, truth3)
    row = int(np.argmin(np.abs(values - 0.9)))
    rows, est = simulate_batch(design, dm, truth3, design.experiments[row].batch, 10**6, 3)
    lam = values[row]
    assert abs(est[rows == row][0] - lam) <= 4 * np.sqrt((1 - lam**2) / 10**6)


def test_analytic_and_frame_backends_agree(design3, truth3):
    # Joint test: per-group Mahalanobis statistics summed into one chi-square.
    design, dm = design3
    a = simulate_experiments(design, dm, truth3, 10**5, 1, backend="analytic")
    f = simulate_experiments(design, dm, truth3, 10**5, 2, backend="frame")
    chi2, dof = 0.0, 0
    for rows, ca, cf in zip(a.groups, a.group_cov, f.group_cov):
        diff = a.lambda_hat[rows] - f.lambda_hat[rows]
        cov = (ca + cf) / a.shots[rows][0]
        w, v = np.linalg.eigh(cov)
        ok = w > 1e-14
        proj = v[:, ok].T @ diff
        chi2 += float(np.sum(proj**2 / w[ok]))
        dof += int(ok.sum())
    assert (chi2 - dof) / np.sqrt(2 * dof) < 4


def test_model_covariance_matches_sampled_covariance(design3, truth3):
    design, dm = design3
    data = simulate_experiments(design, dm, truth3, 10**7, 5)
    values = predicted_row_values(design, dm, truth3)
    for (rows, model), sampled in list(zip(model_row_covariance(design, values), data.group_cov))[:200]:
        scaled = model * np.outer(values[rows], values[rows])
        n = data.shots[rows][0]
        # Standard error of a sample covariance of +-1 variables is at most 1/sqrt(n).
        assert np.abs(scaled - sampled).max() < 5 / np.sqrt(n)


def test_censoring_rank_error_names_parameters(design3, truth3):
    design, dm = design3
    data = exact_data(design, dm, truth3)
    gate = design.gates[0]
    for r, e in enumerate(design.experiments):
        if e.gate == gate.key:
            data.lambda_hat[r] = 0.0
    with pytest.raises(CensoringRankError) as info:
        solve_log_system(design, dm, data)
    assert info.value.lost
    assert all(gate.kind in name for name in info.value.lost)


def test_probability_precision_identity(design3, truth3):
    design, dm = design3
    sol = solve_log_system(design, dm, simulate_experiments(design, dm, truth3, 10**6, 9))
    cov = sol.covariance
    w = probability_map(design, cov.retained)
    full = (w @ sp.csr_matrix(cov.precision) @ w.T).toarray()
    pos = {c: k for k, c in enumerate(cov.retained)}
    for g in design.gates[:20]:
        idx = np.array([pos[design.column_index[c]] for c in design.columns
                        if c.kind == "gate" and c.gate == g.key])
        np.testing.assert_allclose(full[np.ix_(idx, idx)], cov.gate_probability_precision(idx, g.arity),
                                   rtol=1e-12, atol=1e-12 * np.abs(full).max())


def test_orbit_variance_below_eigenvalue_variance(design3, truth3):
    design, dm = design3
    sol = solve_log_system(design, dm, simulate_experiments(design, dm, truth3, 10**6, 4))
    orbit = orbit_marginalizer(design.columns, design.gates)
    m = orbit.matrix[:, sol.covariance.retained]
    orbit_var = np.diag(orbit_covariance(sol.covariance, m))
    gate_cols = [k for k, c in enumerate(sol.covariance.retained) if design.columns[c].kind == "gate"]
    eig_var = np.diag(sol.covariance.covariance_log)[gate_cols]
    assert np.median(orbit_var) < np.median(eig_var)


def test_orbit_covariance_cancellation():
    from noiseaware.estimate import CovarianceModel

    v = 0.3
    model = CovarianceModel([0, 1], np.ones(2), np.linalg.inv(np.array([[v, -v + 1e-9], [-v + 1e-9, v]])))
    out = orbit_covariance(model, np.array([[0.5, 0.5]]))
    assert out[0, 0] == pytest.approx(0.0, abs=1e-8)


def test_to_noise_instance(design3, truth3, char3):
    design, dm = design3
    est = estimate_noise(design, dm, exact_data(design, dm, truth3))
    prior = est.to_noise_instance(char3, "aces:test")
    for g in char3.unique_gates():
        if not g.has_channel:
            assert 0 <= prior.flip(g) <= 0.5
    assert prior.label == "aces:test"


def test_wls_projection_uses_diagonal(design3, truth3):
    design, dm = design3
    data = simulate_experiments(design, dm, truth3, 10**6, 6)
    est = estimate_noise(design, dm, data, method="wls")
    assert est.meta["method"] == "wls"
    assert est.n_fallbacks == 0
    for res in est.projections.values():
        assert res.kkt_residual <= 1e-9


def test_gls_covariance_below_wls_in_loewner_order(design3, truth3):
    # Sandwich covariances under the model row covariance (Gauss-Markov).
    design, dm = design3
    values = predicted_row_values(design, dm, truth3)
    shots = design.batch_shots(10**5)
    batch = np.array([e.batch for e in design.experiments])
    n = values.size
    ri, ci, om, inv = [], [], [], []
    for rows, cov in model_row_covariance(design, values):
        block = cov / shots[batch[rows[0]]]
        rr, cc = np.meshgrid(rows, rows, indexing="ij")
        ri.append(rr.ravel())
        ci.append(cc.ravel())
        om.append(block.ravel())
        inv.append(np.linalg.inv(block).ravel())
    idx = (np.concatenate(ri), np.concatenate(ci))
    omega = sp.csr_matrix((np.concatenate(om), idx), shape=(n, n))
    omega_inv = sp.csr_matrix((np.concatenate(inv), idx), shape=(n, n))
    a = sp.csr_matrix(np.asarray(dm.matrix.astype(float) @ gauge_map(design)[0].toarray()))
    sigma_gls = np.linalg.inv((a.T @ omega_inv @ a).toarray())
    d = sp.diags(1.0 / omega.diagonal())
    b = np.linalg.solve((a.T @ d @ a).toarray(), (a.T @ d).toarray())
    sigma_wls = b @ (omega @ b.T)
    gap = np.linalg.eigvalsh(sigma_wls - sigma_gls)
    assert gap.min() >= -1e-9 * np.abs(gap).max()


@pytest.fixture(scope="module")
def repetitions(design3, truth3):
    design, dm = design3
    orbit = orbit_marginalizer(design.columns, design.gates).matrix
    out = {"gls": [], "wls": [], "all": []}
    for rep in range(200):
        data = simulate_experiments(design, dm, truth3, 10**5, 1000 + rep)
        for method in ("gls", "wls"):
            sol = solve_log_system(design, dm, data, method)
            out[method].append(orbit @ sol.log_values)
            if method == "gls":
                out["all"].append(sol.values)
    return {k: np.array(v) for k, v in out.items()}


def test_gls_variance_not_above_wls(repetitions):
    gls = repetitions["gls"].var(axis=0)
    wls = repetitions["wls"].var(axis=0)
    assert np.all(gls <= wls * (1 + 1e-9))


def test_eigenvalue_estimates_unbiased(repetitions, design3, truth3):
    from scipy.stats import norm

    design, _ = design3
    truth = gauge_fixed_parameters(design, true_parameters(design, truth3))
    est = repetitions["all"]
    se = est.std(axis=0, ddof=1) / np.sqrt(est.shape[0])
    z = (est.mean(axis=0) - truth) / np.maximum(se, 1e-15)
    # Coordinates are strongly correlated, so hold every one of them to the
    # false-alarm rate of a single 3-sigma test (Bonferroni).
    limit = norm.isf(norm.sf(3.0) / z.size)
    assert np.abs(z).max() <= limit


def _orbit_product_rse(char3, params, shots=10**6):
    reference = tuned_depolarizing_instance(params, char3)
    design = build_design(char3, reference_noise=reference)
    dm = compute_design_matrix(design)
    values = predicted_row_values(design, dm, reference)
    n_shots = design.batch_shots(shots)
    batch = np.array([e.batch for e in design.experiments])
    ri, ci, inv = [], [], []
    for rows, cov in model_row_covariance(design, values):
        rr, cc = np.meshgrid(rows, rows, indexing="ij")
        ri.append(rr.ravel())
        ci.append(cc.ravel())
        inv.append((np.linalg.inv(cov) * n_shots[batch[rows[0]]]).ravel())
    n = values.size
    w = sp.csr_matrix((np.concatenate(inv), (np.concatenate(ri), np.concatenate(ci))), shape=(n, n))
    a = reduced_matrix(design, dm)
    sigma = np.linalg.inv((a.T @ w @ a).toarray())
    orbit = orbit_marginalizer(design.columns, design.gates)
    lengths = np.array([len(o) for _, o in orbit.orbits])
    m = orbit.matrix.toarray()[:, gauge_map(design)[1]] * lengths[:, None]
    return design.depths, np.median(np.sqrt(np.diag(m @ sigma @ m.T)))


def test_orbit_product_precision_does_not_degrade_at_lower_rates(char3):
    high = NoiseParameters(r1=0.002, r2=0.016, rm=0.032, rr=0.008)
    low = NoiseParameters(r1=0.0005, r2=0.004, rm=0.008, rr=0.002)
    depths_high, rse_high = _orbit_product_rse(char3, high)
    depths_low, rse_low = _orbit_product_rse(char3, low)
    assert depths_low[1] > depths_high[1]
    assert rse_low <= rse_high
