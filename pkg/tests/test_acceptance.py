"""Acceptance criteria 1-10, each reporting one pass/fail line.

Criteria 6-8 run the full benchmark pipeline over 100 noise instances and
take most of the suite's runtime.
"""

import functools
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from helpers import random_small_circuit
from noiseaware.bench import (
    LambdaFit,
    RunConfig,
    analyse,
    extrapolate,
    fit_epsilon,
    fit_lambda,
    pooled_log_ratio,
    qubit_count,
    run_pipeline,
    run_points,
    write_reports,
)
from noiseaware.circuit import gate_orbits
from noiseaware.design import (
    EigenvalueIndex,
    build_design,
    compute_design_matrix,
    optimize_shot_weights,
    orbit_marginalizer,
    predicted_row_values,
    true_parameters,
)
from noiseaware.estimate import (
    estimate_noise,
    probability_map,
    simulate_batch,
    simulate_experiments,
    solve_log_system,
)
from noiseaware.matching import decode, decode_batch, edge_weight
from noiseaware.memory import memory_experiment
from noiseaware.noise import NoiseParameters, sample_lognormal_instance, tuned_depolarizing_instance
from noiseaware.pauli import (
    PauliChannel,
    channel_to_eigenvalues,
    eigenvalue_jacobian,
    eigenvalues_to_channel,
    pauli_labels,
)
from noiseaware.projection import KKT_TOL, project_simplex_mahalanobis
from noiseaware.surface import build_layout, characterization_circuit

SEEDS = tuple(range(100))


# Criterion 1: Walsh-Hadamard round trip and probability-coordinate precision.


def test_criterion_1_transform_identities(design3, truth3, acceptance_report):
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(10**4):
        n = 1 + k % 2
        probs = rng.dirichlet(np.full(4**n, 0.3))
        ch = PauliChannel(n, probs)
        back = eigenvalues_to_channel(channel_to_eigenvalues(ch))
        worst = max(worst, np.abs(back.probs - probs).max())

    design, dm = design3
    cov = solve_log_system(design, dm, simulate_experiments(design, dm, truth3, 10**6, 5)).covariance
    w = probability_map(design, cov.retained)
    via_w = (w @ csr_matrix(cov.precision) @ w.T).toarray()
    # Independent assembly: transform each gate's rows and columns by J^T and J.
    assembled = cov.precision.copy()
    pos = {c: k for k, c in enumerate(cov.retained)}
    blocks = []
    for g in design.gates:
        idx = np.array([pos[design.column_index[EigenvalueIndex.for_gate(g, lbl)]] for lbl in pauli_labels(g.arity)[1:]])
        blocks.append((idx, eigenvalue_jacobian(g.arity)))
    for idx, jac in blocks:
        assembled[idx, :] = jac.T @ assembled[idx, :]
    for idx, jac in blocks:
        assembled[:, idx] = assembled[:, idx] @ jac
    rel = np.abs(via_w - assembled).max() / np.abs(assembled).max()
    ok = worst <= 1e-12 and rel <= 1e-12
    acceptance_report(1, ok, f"WHT round trip max err {worst:.2e}; precision identity rel err {rel:.2e}")
    assert ok


# Criterion 2: single experiments match their predicted eigenvalue; orbit periodicity.


def test_criterion_2_experiment_eigenvalues(acceptance_report):
    rng = np.random.default_rng(7)
    params = NoiseParameters(r1=0.01, r2=0.03, rm=0.02, rr=0.01)
    shots = 10**6
    zs, periodic_ok, checked = [], True, 0
    for i in range(50):
        circuit = random_small_circuit(rng)
        truth = sample_lognormal_instance(params, circuit, i)
        t = int(rng.integers(2, 9))
        design = build_design(circuit, depths=(1, t), check_rank=False)
        dm = compute_design_matrix(design)
        lam = predicted_row_values(design, dm, truth)
        row = int(rng.integers(len(design.experiments)))
        rows, est = simulate_batch(design, dm, truth, design.experiments[row].batch, shots, i)
        k = int(np.flatnonzero(rows == row)[0])
        zs.append((est[k] - lam[row]) / math.sqrt(max(1 - lam[row] ** 2, 1e-300) / shots))

        # Extending a row by one orbit period adds each orbit label once.
        full = build_design(circuit, depths=tuple(range(1, 9)), check_rank=False)
        a = compute_design_matrix(full).matrix.toarray()
        index = {(e.layer, e.qubits, e.prepared, e.depth): r for r, e in enumerate(full.experiments)}
        for (layer, qubits, prepared, depth), r in index.items():
            e = full.experiments[r]
            if e.gate is None:
                continue
            gate = next(g for g in full.gates if g.key == e.gate)
            orbit = gate_orbits(gate).orbit_of(prepared)
            later = index.get((layer, qubits, prepared, depth + len(orbit)))
            if later is None:
                continue
            expected = np.zeros(a.shape[1], dtype=np.int64)
            for lbl in orbit:
                expected[full.column_index[EigenvalueIndex.for_gate(gate, lbl)]] += 1
            periodic_ok &= bool(np.array_equal(a[later] - a[r], expected))
            checked += 1
    worst = float(np.max(np.abs(zs)))
    ok = worst <= 4 and periodic_ok and checked > 0
    acceptance_report(2, ok, f"max |z| {worst:.2f} over 50 circuits; orbit periodicity exact on {checked} rows")
    assert ok


# Criterion 3: d=3 estimate accuracy and shot scaling.


@pytest.fixture(scope="module")
def weighted_design3(char3, reference3):
    design = build_design(char3, reference_noise=reference3)
    dm = compute_design_matrix(design)
    weights = optimize_shot_weights(design, dm, reference3, iterations=10)
    return design.with_weights(weights), dm


def _orbit_product_errors(design, sol, truth_values):
    omap = orbit_marginalizer(design.columns, design.gates)
    lengths = np.array([len(orbit) for _, orbit in omap.orbits])
    est = lengths * (omap.matrix @ sol.log_values)
    ref = lengths * (omap.matrix @ np.log(truth_values))
    return np.abs(np.expm1(est - ref))


def test_criterion_3_estimate_accuracy(weighted_design3, truth3, acceptance_report):
    design, dm = weighted_design3
    truth_values = true_parameters(design, truth3)
    hi = estimate_noise(design, dm, simulate_experiments(design, dm, truth3, 10**7, 30))
    lo = estimate_noise(design, dm, simulate_experiments(design, dm, truth3, 10**5, 31))
    rel = np.array([abs(hi.total_error(g.key) - truth3.channel(g).total_error) / truth3.channel(g).total_error
                    for g in design.gates])
    frac = float(np.mean(rel <= 0.10))
    ratio = float(np.median(_orbit_product_errors(design, lo.solution, truth_values))
                  / np.median(_orbit_product_errors(design, hi.solution, truth_values)))
    ok = frac >= 0.95 and 5 <= ratio <= 20
    acceptance_report(3, ok, f"{100 * frac:.1f}% of gates within 10% at 1e7 shots; orbit error ratio 1e5/1e7 = {ratio:.2f}")
    assert ok


# Criterion 4: Mahalanobis projection.


def _grid_projection(p_hat, q, levels=7):
    """Minimise over a feasible 3-D grid, zooming in around the best point."""
    center, half = np.full(3, 0.5), 0.5
    best = None
    for _ in range(levels):
        axis = np.linspace(-half, half, 41)
        pts = center + np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
        pts = pts[(pts.min(axis=1) >= 0) & (pts.sum(axis=1) <= 1)]
        if best is not None:
            pts = np.vstack([pts, best])
        r = pts - p_hat
        best = pts[np.argmin(np.einsum("ij,jk,ik->i", r, q, r))]
        center, half = best, half / 8
    return best


def test_criterion_4_projection(acceptance_report):
    rng = np.random.default_rng(4)
    cases = [(np.array([-0.01, 0.02, 0.03]), np.diag([100.0, 1.0, 1.0]))]
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        cases.append((rng.normal(0.1, 0.4, 3), a @ a.T + 0.05 * np.eye(3)))
    grid_err = max(np.abs(project_simplex_mahalanobis(p, q).p - _grid_projection(p, q)).max() for p, q in cases)

    beaten, worst_kkt, infeasible = 0, 0.0, 0
    trials = 200
    for t in range(trials):
        n = 3 if t % 2 else 15
        a = rng.normal(size=(n, n))
        q = a @ a.T + 0.1 * np.eye(n)
        p_hat = rng.normal(0.05, 0.3, n)
        res = project_simplex_mahalanobis(p_hat, q)
        worst_kkt = max(worst_kkt, res.kkt_residual)
        infeasible += int(res.p.min() < -1e-12 or res.p.sum() > 1 + 1e-12)
        pts = rng.dirichlet(np.ones(n + 1), 1000)[:, :n]
        r = pts - p_hat
        others = np.einsum("ij,jk,ik->i", r, q, r)
        d0 = (res.p - p_hat) @ q @ (res.p - p_hat)
        beaten += int(np.all(d0 <= others + 1e-12))
    ok = grid_err <= 1e-4 and beaten == trials and worst_kkt <= KKT_TOL and infeasible == 0
    acceptance_report(
        4, ok, f"grid oracle max err {grid_err:.1e}; beat random points on {beaten}/{trials}; max KKT {worst_kkt:.1e}"
    )
    assert ok


# Criterion 5: exact matching optimum and single-fault correction.


def _brute_force_weight(dist, defects, boundary):
    @functools.lru_cache(maxsize=None)
    def best(rest):
        if not rest:
            return 0.0
        a, tail = rest[0], rest[1:]
        out = dist[a, boundary] + best(tail)
        for i, b in enumerate(tail):
            out = min(out, dist[a, b] + best(tail[:i] + tail[i + 1:]))
        return out

    return best(tuple(int(x) for x in defects))


def _shortest_paths(graph):
    n = graph.n_detectors + 1
    keys, probs, _ = graph.to_arrays()
    w = edge_weight(probs)
    m = csr_matrix((np.concatenate([w, w]), (np.concatenate([keys[:, 0], keys[:, 1]]),
                                            np.concatenate([keys[:, 1], keys[:, 0]]))), shape=(n, n))
    return dijkstra(m)


def test_criterion_5_decoder(acceptance_report):
    rng = np.random.default_rng(5)
    graphs = []
    for d, r, basis in [(3, 3, "Z"), (3, 3, "X"), (5, 3, "Z"), (5, 3, "X")]:
        circuit = characterization_circuit(build_layout(d))
        for prior in (sample_lognormal_instance(NoiseParameters(), circuit, 0),
                      tuned_depolarizing_instance(NoiseParameters(), circuit)):
            g = memory_experiment(d, r, basis).matching_graph(prior)
            graphs.append((g, _shortest_paths(g)))
    mismatches = 0
    for i in range(500):
        graph, dist = graphs[i % len(graphs)]
        k = int(rng.integers(1, 13))
        defects = np.sort(rng.choice(graph.n_detectors, k, replace=False))
        ours = decode(graph, defects).weight
        ref = _brute_force_weight(dist, defects, graph.boundary)
        mismatches += int(not math.isclose(ours, ref, rel_tol=1e-9, abs_tol=1e-9))

    uncorrected, total = {}, 0
    for d in (3, 5):
        truth = sample_lognormal_instance(NoiseParameters(), characterization_circuit(build_layout(d)), 0)
        for r in sorted({2, 3, d}):
            for basis in ("X", "Z"):
                exp = memory_experiment(d, r, basis)
                dem = exp.dem(truth)
                syn = np.zeros((len(dem), dem.n_detectors), dtype=bool)
                for k, dets in enumerate(dem.detectors):
                    syn[k, list(dets)] = True
                pred = decode_batch(exp.matching_graph(truth), syn, backend="exact")
                bad = int(np.sum(pred != dem.logical))
                total += len(dem)
                if bad:
                    uncorrected[f"d{d} r{r} {basis}"] = bad
    ok = mismatches == 0 and not uncorrected
    acceptance_report(
        5, ok, f"{mismatches}/500 weight mismatches vs brute force; "
        f"uncorrected single faults {uncorrected or 0} of {total}"
    )
    assert ok


# Criteria 6-8: benchmark pipeline over 100 instances.


@pytest.fixture(scope="module")
def run_true_dep():
    config = RunConfig(distances=(3, 5, 7), rounds=(3, 5, 9), shots=20000, seeds=SEEDS, priors=("true", "dep"))
    points = run_points(config)
    return config, points, analyse(config, points)


@pytest.fixture(scope="module")
def run_aces():
    config = RunConfig(distances=(3, 5), rounds=(3, 5, 9), shots=20000, seeds=SEEDS,
                       priors=("true", "dep", "aces:1000000"))
    return config, run_points(config)


def test_criterion_6_true_prior_gains_lambda(run_true_dep, acceptance_report):
    _, _, report = run_true_dep
    cmp = report["comparisons"]["dep/true"]
    diff, slope = cmp["lambda_difference"], cmp["log_ratio_slope"]
    ok = diff["lower95"] > 0 and slope["lower95"] > 0
    lam = report["lambda"]
    acceptance_report(
        6, ok,
        f"Lambda true {lam['true']['mean']:.4f} dep {lam['dep']['mean']:.4f}; "
        f"difference {diff['mean']:.4f} (lower95 {diff['lower95']:.4f}); "
        f"ratio slope {slope['mean']:.4f} (lower95 {slope['lower95']:.4f})",
    )
    assert ok


def test_criterion_7_aces_prior_close_to_true(run_aces, acceptance_report):
    _, points = run_aces
    log_ratio, se = pooled_log_ratio(points, "true", "aces:1000000")
    ratio = math.exp(log_ratio)
    gap, gap_se = pooled_log_ratio(points, "aces:1000000", "dep")
    z = gap / gap_se
    ok = 0.97 <= ratio <= 1.08 and z > 1.645
    acceptance_report(
        7, ok, f"eps_aces/eps_true {ratio:.4f} (se {se:.4f}); log(eps_dep/eps_aces) {gap:.4f}, z {z:.1f}"
    )
    assert ok


def test_criterion_8_confusion_asymmetry(run_true_dep, acceptance_report):
    _, points, report = run_true_dep
    conf = report["confusion"]["3"]
    counts = np.array(conf["counts"])
    i, j = conf["priors"].index("true"), conf["priors"].index("dep")
    ft = np.concatenate([p.failures["true"] for p in points if p.distance == 3])
    fd = np.concatenate([p.failures["dep"] for p in points if p.distance == 3])
    recount = counts[i, j] == np.sum(~ft & fd) and counts[j, i] == np.sum(~fd & ft)
    # Failure difference equals the off-diagonal difference.
    identity = recount and counts[j, j] - counts[i, i] == counts[i, j] - counts[j, i]
    # c[true, dep]: true prior succeeded where dep failed.
    a, b = counts[i, j], counts[j, i]
    z = (a - b) / math.sqrt(a + b)
    ok = identity and z > 2
    acceptance_report(8, ok, f"d=3 true-only successes {a}, dep-only successes {b}, z {z:.1f}; identity {identity}")
    assert ok


# Criterion 9: fit machinery and extrapolation.


def test_criterion_9_fits_and_extrapolation(acceptance_report):
    d = np.array([3, 5, 7, 9])
    rounds = np.array([3, 5, 9])
    eps = 0.02 * 1.736 ** (-d / 2)
    fitted = []
    for e in eps:
        rates = 0.5 * (1 - (1 - 2 * e) ** rounds)
        fitted.append(fit_epsilon(rounds, rates, 10**6).eps)
    lam = fit_lambda(d, fitted).Lambda
    fit = LambdaFit(1.736, 0.0, -math.log(1.736) / 2, math.log(0.1))
    step = extrapolate(fit, 63).eps / extrapolate(fit, 61).eps
    counts = (qubit_count(63), qubit_count(61), qubit_count(63) - qubit_count(61))
    ok = abs(lam - 1.736) <= 1e-6 and counts == (7937, 7441, 496) and math.isclose(step, 1 / 1.736, rel_tol=1e-12)
    acceptance_report(9, ok, f"planted Lambda recovered as {lam:.9f}; qubits d=63/61 {counts[0]}/{counts[1]} (+{counts[2]})")
    assert ok


# Criterion 10: byte-identical reports.


def test_criterion_10_reproducible_reports(tmp_path, acceptance_report):
    config = RunConfig(distances=(3, 5), rounds=(3, 5), shots=2000, seeds=(0, 1),
                       priors=("true", "dep", "aces:100000"), aces_weight_iterations=3)
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        write_reports(run_pipeline(config), out)
        outputs.append({name: (out / name).read_bytes() for name in ("report.json", "points.csv", "ratios.csv")})
    ok = outputs[0] == outputs[1]
    acceptance_report(10, ok, "report.json, points.csv and ratios.csv byte-identical across two runs" if ok
                      else "reports differ between runs")
    assert ok
