"""
Tests for the toy KL study and the estimator scaling diagnostics.
"""

import sys
import os
import json
import tempfile

import numpy as np
from scipy.integrate import trapezoid

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from analysis import (ScalingSetup, ToyKlSpec, adaptive_moments, estimator_scaling_report, forward_kl_fit,
                      mixture_grad_log_density, mixture_log_density, reverse_kl_fit, toy_kl_report)
from errors import ConfigError, NumericError


def test_mixture_density_normalizes_and_gradient_matches():
    spec = ToyKlSpec()
    grid = np.linspace(-20.0, 20.0, 20001)
    assert abs(trapezoid(np.exp(mixture_log_density(grid, spec)), grid) - 1.0) < 1e-9
    x, h = np.array([-3.0, -0.5, 0.0, 1.2]), 1e-6
    numeric = (mixture_log_density(x + h, spec) - mixture_log_density(x - h, spec)) / (2.0 * h)
    assert np.allclose(mixture_grad_log_density(x, spec), numeric, atol=1e-7)


def test_forward_kl_matches_closed_form():
    spec = ToyKlSpec(mu1=-2.0, mu2=2.0)
    assert spec.closed_form == (0.0, 5.0)
    assert ToyKlSpec().closed_form == (0.0, 10.0)
    fit = forward_kl_fit(spec)
    assert abs(fit['mu']) < 1e-6
    assert fit['rel_error_var'] < 1e-6
    assert fit['quadrature_nodes'] >= spec.n_nodes


def test_forward_kl_is_symmetric_in_the_modes():
    swapped = forward_kl_fit(ToyKlSpec(mu1=2.0, mu2=-2.0))
    assert abs(swapped['mu']) < 1e-6
    assert abs(swapped['var'] - 5.0) < 5e-6


def test_quadrature_failure_reports_a_hint():
    try:
        adaptive_moments(ToyKlSpec(max_nodes=400))
    except NumericError as e:
        assert 'max_nodes' in str(e)
        return
    raise AssertionError("unconverged quadrature accepted")


def test_reverse_kl_collapses_onto_one_mode():
    spec = ToyKlSpec()
    near_first = reverse_kl_fit(spec, -2.25, 1.0)
    assert near_first['nearest_mode'] == spec.mu1
    assert abs(near_first['mu'] - spec.mu1) < 0.2
    assert abs(near_first['var'] - 1.0) < 0.3
    near_second = reverse_kl_fit(spec, 2.25, 1.0)
    assert abs(near_second['mu'] - spec.mu2) < 0.2


def test_reverse_kl_stays_centred_when_modes_overlap():
    spec = ToyKlSpec(mu1=-2.0, mu2=2.0)
    for init_mu in (-1.5, 0.2, -2.0):
        fit = reverse_kl_fit(spec, init_mu, 1.0)
        assert abs(fit['mu']) < 1e-3
        assert 3.5 < fit['var'] < 5.0
    report = toy_kl_report(spec)
    assert not report['distinct_reverse_endpoints']


def test_toy_report_shows_initialization_dependence():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'toy_kl.json')
        report = toy_kl_report(ToyKlSpec(), out_path=path)
        with open(path) as handle:
            saved = json.load(handle)
    assert report['distinct_reverse_endpoints']
    assert report['reverse'][0]['nearest_mode'] == -3.0
    assert report['reverse'][1]['nearest_mode'] == 3.0
    assert saved['forward']['closed_form'] == {'mu': 0.0, 'var': 10.0}


def test_invalid_toy_spec_rejected():
    for kwargs in ({'mu1': 1.0, 'mu2': 1.0}, {'sigma': 0.0}, {'n_nodes': 2}):
        try:
            ToyKlSpec(**kwargs)
        except ConfigError:
            continue
        raise AssertionError(f"{kwargs} accepted")


def test_scaling_setup_truth():
    setup = ScalingSetup()
    assert abs(setup.marginal_var - 2.0) < 1e-12
    assert abs(float(setup.true_score(2.0)) + 1.0) < 1e-12
    assert abs(setup.true_loss() - 0.08) < 1e-9


def test_scaling_report_tables_and_files():
    with tempfile.TemporaryDirectory() as tmp:
        report = estimator_scaling_report([16, 256], [4, 16], replications=40, seed=1, out_dir=tmp)
        for name in ('score_scaling.csv', 'loss_scaling.csv', 'diag.json'):
            assert os.path.exists(os.path.join(tmp, name))
    score_rows = report['score_table']
    assert [row['L'] for row in score_rows] == [16, 256]
    assert score_rows[1]['std'] < score_rows[0]['std']
    assert report['score_std_slope'] < 0.0
    assert [row['S'] for row in report['loss_table']] == [4, 16]
    assert all(row['mse'] >= 0.0 for row in report['loss_table'])
    assert report['exact_weights']['S'] == 16
    assert np.isfinite(report['exact_weights']['mean_loss'])


def test_scaling_report_is_reproducible_across_workers():
    first = estimator_scaling_report([8, 32], [4], replications=6, seed=2, n_jobs=1)
    second = estimator_scaling_report([8, 32], [4], replications=6, seed=2, n_jobs=3)
    assert first['score_table'] == second['score_table']
    assert first['loss_table'] == second['loss_table']


def test_scaling_report_rejects_single_replication():
    try:
        estimator_scaling_report([8], [4], replications=1)
    except ConfigError:
        return
    raise AssertionError("single replication accepted")


def main():
    """Run all tests."""
    print("🚀 Analysis tests")
    tests = [value for name, value in sorted(globals().items()) if name.startswith('test_') and callable(value)]
    passed = 0
    for test in tests:
        try:
            test()
            passed += 1
            print(f"   ✅ {test.__name__}")
        except Exception as e:
            print(f"   ❌ {test.__name__}: {e!r}")
    print(f"📊 {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
