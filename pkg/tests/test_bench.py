import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noiseaware.bench import (
    ConfigError,
    FitError,
    LambdaFit,
    RunConfig,
    comparison_table,
    confusion_matrix,
    derive_seed,
    distance_for_target,
    extrapolate,
    fit_epsilon,
    fit_lambda,
    fit_ratio,
    format_comparison,
    one_sided_lower,
    paired_log_ratio,
    parse_prior,
    qubit_count,
    report_json,
    run_pipeline,
)
from noiseaware.cli import main

ROUNDS = np.array([3, 5, 9, 17])


def exact_failures(eps, rounds):
    return (1 - (1 - 2 * eps) ** np.asarray(rounds, dtype=float)) / 2


def test_fit_epsilon_exact():
    fit = fit_epsilon(ROUNDS, exact_failures(1e-3, ROUNDS), 10**5)
    assert fit.eps == pytest.approx(1e-3, abs=1e-9)
    assert fit.intercept == pytest.approx(0.0, abs=1e-9)


def test_fit_epsilon_binomial(rng):
    f = rng.binomial(10**5, exact_failures(1e-3, ROUNDS)) / 10**5
    fit = fit_epsilon(ROUNDS, f, 10**5)
    assert abs(fit.eps - 1e-3) < 4 * fit.se


def test_fit_epsilon_standard_error_is_calibrated(rng):
    fits = [fit_epsilon(ROUNDS, rng.binomial(2 * 10**4, exact_failures(5e-3, ROUNDS)) / 2e4, 2 * 10**4)
            for _ in range(400)]
    spread = np.std([f.eps for f in fits])
    assert spread == pytest.approx(np.mean([f.se for f in fits]), rel=0.15)


def test_fit_epsilon_errors():
    with pytest.raises(FitError):
        fit_epsilon([3], [0.01], 1000)
    with pytest.raises(FitError):
        fit_epsilon([3, 5], [0.01, 0.6], 1000)


def test_fit_epsilon_censors_saturated_rows():
    rounds = [3, 5, 9, 400]
    f = list(exact_failures(2e-3, rounds[:3])) + [0.5]
    assert fit_epsilon(rounds, f, 10**4).used_rounds == (3, 5, 9)


def test_fit_lambda_recovers_planted_value():
    d = np.array([3, 5, 7, 9])
    fit = fit_lambda(d, 0.1 * 1.736 ** (-d / 2))
    assert fit.Lambda == pytest.approx(1.736, abs=1e-6)
    assert fit_lambda(d, np.full(4, 0.01)).slope == pytest.approx(0.0, abs=1e-12)


def test_fit_chain_is_consistent():
    d = np.array([3, 5, 7])
    eps = 0.02 * 1.736 ** (-d / 2)
    fitted = [fit_epsilon(ROUNDS, exact_failures(e, ROUNDS), 10**6).eps for e in eps]
    np.testing.assert_allclose(fitted, eps, rtol=1e-6)
    assert fit_lambda(d, fitted).Lambda == pytest.approx(1.736, abs=1e-6)


def test_fit_lambda_needs_two_distances():
    with pytest.raises(FitError):
        fit_lambda([3, 3], [0.01, 0.02])


def test_fit_ratio():
    d = np.array([3, 5, 7])
    fit = fit_ratio(d, 0.01 + 0.02 * d)
    assert fit.beta == pytest.approx(0.02)
    assert fit.alpha == pytest.approx(0.01)


def test_paired_log_ratio_standard_error(rng):
    # Correlated per-shot failures: b fails whenever a does plus a little more.
    n = 20000
    values = []
    se = []
    for _ in range(300):
        fa, fb, both = [], [], []
        for r in ROUNDS[:3]:
            pa = exact_failures(4e-3, r)
            pb = exact_failures(4.4e-3, r)
            u = rng.random(n)
            a = u < pa
            b = u < pb
            fa.append(a.sum())
            fb.append(b.sum())
            both.append((a & b).sum())
        v, s = paired_log_ratio(ROUNDS[:3], fa, fb, both, n)
        values.append(v)
        se.append(s)
    assert np.mean(values) == pytest.approx(math.log(1.1), abs=4 * np.std(values) / np.sqrt(300))
    assert np.std(values) == pytest.approx(np.mean(se), rel=0.2)


def test_one_sided_lower():
    mean, se, lower = one_sided_lower([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert se == pytest.approx(1 / math.sqrt(3))
    assert lower == pytest.approx(2.0 - 2.919986 * se, rel=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 60), st.integers(0, 2**31))
def test_confusion_identity(k, shots, seed):
    rng = np.random.default_rng(seed)
    fails = {f"p{i}": rng.random(shots) < 0.3 for i in range(k)}
    m = confusion_matrix(fails)
    assert m.check_identity()
    for i, name in enumerate(m.names):
        assert m.counts[i, i] == fails[name].sum()


def test_confusion_identical_priors():
    f = np.array([True, False, True])
    m = confusion_matrix({"a": f, "b": f.copy()})
    assert m.counts[0, 1] == m.counts[1, 0] == 0


def test_confusion_orientation():
    m = confusion_matrix({"true": np.array([False, False, True]), "dep": np.array([True, False, True])})
    # Row prior succeeded, column prior failed.
    assert m.counts[0, 1] == 1 and m.counts[1, 0] == 0


def test_confusion_mismatched_shots():
    with pytest.raises(ValueError):
        confusion_matrix({"a": np.zeros(3, bool), "b": np.zeros(4, bool)})


def test_qubit_counts():
    assert qubit_count(63) == 7937
    assert qubit_count(61) == 7441
    assert qubit_count(63) - qubit_count(61) == 496


def test_extrapolation_scaling_and_guardrail():
    fit = LambdaFit(1.736, 0.0, -math.log(1.736) / 2, math.log(0.1))
    ratio = extrapolate(fit, 63).eps / extrapolate(fit, 61).eps
    assert ratio == pytest.approx(1 / 1.736, rel=1e-12)
    assert not extrapolate(fit, 101).flagged
    assert extrapolate(fit, 103).flagged


def test_distance_for_target_is_smallest_odd():
    fit = LambdaFit(1.736, 0.0, -math.log(1.736) / 2, math.log(0.1))
    ex = distance_for_target(fit, 1e-12)
    assert ex.distance % 2 == 1 and ex.eps <= 1e-12
    assert extrapolate(fit, ex.distance - 2).eps > 1e-12


def test_comparison_format_golden():
    slope_t, slope_d = -math.log(1.736) / 2, -math.log(1.6967) / 2
    # Anchor both fits so that d=63 and d=61 are exactly the distances that reach the target.
    target = 1e-15
    fits = {
        "dep": LambdaFit(1.6967, 0.0, slope_d, math.log(target) - slope_d * 63 - 1e-9),
        "true": LambdaFit(1.736, 0.0, slope_t, math.log(target) - slope_t * 61 - 1e-9),
    }
    text = format_comparison(comparison_table(fits, target))
    lines = text.splitlines()
    assert lines[0].split() == ["prior", "d", "qubits", "eps"]
    assert lines[1].split()[:3] == ["dep", "63", "7937"]
    assert lines[2].split()[:3] == ["true", "61", "7441"]
    assert lines[-1] == "qubit reduction: 496"


def test_parse_prior():
    assert parse_prior("true") == ("true", None)
    assert parse_prior("aces:1e6") == ("aces", 10**6)
    for bad in ("aces:x", "aces:0", "magic"):
        with pytest.raises(ConfigError):
            parse_prior(bad)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 3, "truth") == derive_seed(1, 3, "truth")
    assert len({derive_seed(1, 3, 5, b) for b in "XZ"} | {derive_seed(2, 3, 5, "X")}) == 3


@pytest.mark.parametrize(
    "data",
    [
        {"distances": [4]},
        {"rounds": [0]},
        {"shots": 0},
        {"noise": "pink"},
        {"priors": ["true", "true"]},
        {"priors": ["oracle"]},
        {"bogus": 1},
        {"params": {"r1": 2}},
        {"decoder": "fast"},
    ],
)
def test_config_errors(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_config_round_trip():
    config = RunConfig.from_dict({"distances": [3], "priors": "true,dep", "shots": 10})
    assert RunConfig.from_dict(config.to_dict()) == config


TINY = {"distances": [3], "rounds": [3], "shots": 1000, "priors": ["true"], "seeds": [0]}


def test_pipeline_is_deterministic():
    config = RunConfig.from_dict(TINY)
    a = report_json(run_pipeline(config))
    b = report_json(run_pipeline(config))
    assert a == b
    report = json.loads(a)
    assert report["version"] == 1
    assert sum(p["shots"] for p in report["points"]) == 1000


def test_pipeline_streams_are_paired():
    config = RunConfig.from_dict({**TINY, "priors": ["true", "dep"], "distances": [3, 5]})
    report = run_pipeline(config)
    confusion = report["confusion"]["3"]
    assert confusion["priors"] == ["true", "dep"]
    for p in report["points"]:
        assert set(p["failures"]) == {"true", "dep"}


def test_cli_pipeline_writes_reports(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(TINY))
    out = tmp_path / "out"
    assert main(["pipeline", "--config", str(config), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"report.json", "points.csv", "ratios.csv"}
    first = (out / "report.json").read_bytes()
    assert main(["pipeline", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "report.json").read_bytes() == first


def test_cli_exit_codes(tmp_path):
    assert main(["pipeline", "--distance", "4"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["pipeline", "--config", str(bad)]) == 2
    assert main(["fit", str(bad)]) == 2
    assert main(["nonsense"]) == 2
    # Too few ACES shots: every row is censored, or batches get no shots at all.
    assert main(["estimate", "--distance", "3", "--shots", "2000"]) == 3
    assert main(["estimate", "--distance", "3", "--shots", "100"]) == 3


def test_cli_fit_refits_saved_report(tmp_path):
    out = tmp_path / "out"
    config = {**TINY, "distances": [3, 5], "rounds": [3, 5]}
    (tmp_path / "c.json").write_text(json.dumps(config))
    assert main(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 0
    assert main(["fit", str(out / "report.json"), "--out", str(tmp_path / "fit")]) == 0
    fit = json.loads((tmp_path / "fit" / "fit.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert fit["lambda"]["true"]["mean"] == pytest.approx(report["lambda"]["true"]["mean"])
