"""
Tests for Wasserstein distances and the histogram TVD metrics.
"""

import sys
import os
import json
import itertools
import tempfile

import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from energy import build_energy
from errors import ConfigError
from metrics import (MAX_ASSIGNMENT_SIZE, distance_tvd, energy_tvd, evaluate, pair_distances, sample_tvd,
                     tvd_bins, wasserstein)
from numerics import Rng
from samples import SampleSet


def _brute_force(a, b, p):
    best = min(sum(np.linalg.norm(a[i] - b[j]) ** p for i, j in enumerate(perm))
               for perm in itertools.permutations(range(len(b))))
    return (best / len(a)) ** (1.0 / p)


def test_identical_sets_have_zero_distance():
    points = Rng(0).normal(size=(40, 2))
    assert wasserstein(points, points, 1) < 1e-9
    assert wasserstein(points, points, 2) < 1e-9
    shuffled = points[Rng(1).choice(40, 40)]
    assert wasserstein(points, shuffled, 2) < 1e-6


def test_singletons():
    assert abs(wasserstein([[0.0]], [[3.0]], 1) - 3.0) < 1e-12
    assert abs(wasserstein([[0.0]], [[3.0]], 2) - 3.0) < 1e-12
    assert abs(wasserstein([[0.0, 0.0]], [[3.0, 4.0]], 2) - 5.0) < 1e-9


def test_assignment_matches_brute_force():
    for n in (4, 5, 6):
        rng = Rng(n)
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + 0.5
        for p in (1, 2):
            assert np.isclose(wasserstein(a, b, p), _brute_force(a, b, p), rtol=1e-7, atol=1e-7)


def test_symmetry_and_ordering():
    rng = Rng(3)
    a, b = rng.normal(size=(30, 2)), rng.normal(size=(20, 2)) * 2.0
    for p in (1, 2):
        assert np.isclose(wasserstein(a, b, p, seed=4), wasserstein(b, a, p, seed=4), rtol=1e-10)
    assert wasserstein(a, b, 1, seed=4) <= wasserstein(a, b, 2, seed=4) + 1e-12


def test_triangle_inequality_on_random_triples():
    rng = Rng(12)
    for trial in range(10):
        a = rng.normal(size=(25, 2))
        b = rng.normal(size=(25, 2)) * 1.5 + 0.5
        c = rng.uniform(-2.0, 2.0, size=(25, 2))
        for p in (1, 2):
            assert wasserstein(a, c, p) <= wasserstein(a, b, p) + wasserstein(b, c, p) + 1e-9, (trial, p)


def test_wasserstein_input_errors():
    cases = [
        (np.zeros((3, 2)), np.zeros((3, 3)), 1),
        (np.zeros((3, 2)), np.zeros((3, 2)), 3),
        (np.zeros((0, 2)), np.zeros((3, 2)), 1),
        (np.zeros((MAX_ASSIGNMENT_SIZE + 1, 1)), np.zeros((MAX_ASSIGNMENT_SIZE + 1, 1)), 1),
    ]
    for a, b, p in cases:
        try:
            wasserstein(a, b, p)
        except ConfigError:
            continue
        raise AssertionError(f"invalid input {a.shape}, {b.shape}, p={p} accepted")


def test_bin_rule():
    assert tvd_bins(1) == 2
    assert tvd_bins(100) == 10
    assert tvd_bins(1000) == 31


def test_energy_tvd_self_and_disjoint():
    f = build_energy('gauss1')
    points = Rng(0).normal(size=(100, 1))
    assert energy_tvd(points, points, f) == 0.0
    assert abs(energy_tvd(np.zeros((4, 1)), np.full((4, 1), 10.0), f) - 1.0) < 1e-12


def test_energy_tvd_drops_non_finite_energies():
    f = build_energy('lj13')
    good = Rng(1).normal(size=(9, 39)) * 2.0
    bad = good.copy()
    bad[0, 3:6] = bad[0, 0:3]
    value = energy_tvd(bad, good, f)
    assert 0.0 <= value <= 1.0


def test_sample_tvd_self_disjoint_and_dimension():
    points = Rng(2).normal(size=(64, 2))
    assert sample_tvd(points, points) == 0.0
    assert abs(sample_tvd(points, points + 100.0) - 1.0) < 1e-12
    try:
        sample_tvd(np.zeros((5, 3)), np.zeros((5, 3)))
    except ConfigError:
        return
    raise AssertionError("3D sample TVD accepted")


def test_pair_distances_and_distance_tvd():
    config = np.array([[0.0, 0.0, 3.0, 0.0, 0.0, 4.0]])
    assert np.allclose(np.sort(pair_distances(config, 3, 2)[0]), [3.0, 4.0, 5.0])
    near = np.tile([0.0, 1.0], (4, 1))
    far = np.tile([0.0, 5.0], (4, 1))
    assert abs(distance_tvd(near, far, 2, 1) - 1.0) < 1e-12
    assert distance_tvd(near, near, 2, 1) == 0.0
    try:
        pair_distances(np.zeros((2, 5)), 3, 2)
    except ConfigError:
        return
    raise AssertionError("wrong particle layout accepted")


def test_evaluate_selects_metrics_per_benchmark():
    gmm = build_energy('gmm40')
    ref = gmm.reference_sample(200, Rng(0).substream('reference'))
    report = evaluate(ref, ref, gmm)
    assert report.w1 < 1e-9 and report.w2 < 1e-9 and report.e_tvd == 0.0 and report.s_tvd == 0.0
    assert report.d_tvd is None

    dw = build_energy('dw4')
    gen, other = Rng(1).normal(size=(30, 8)) * 2.0, Rng(2).normal(size=(40, 8)) * 2.0
    report = evaluate(SampleSet(points=gen), SampleSet(points=other), dw, seed=3)
    assert report.s_tvd is None
    assert 0.0 <= report.d_tvd <= 1.0
    assert report.n_gen == 30 and report.n_ref == 40 and report.config['matched_n'] == 30
    try:
        evaluate(gen, other, gmm)
    except ConfigError:
        pass
    else:
        raise AssertionError("benchmark dimension mismatch accepted")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'metrics.json')
        report.save(path)
        with open(path) as handle:
            assert json.load(handle)['n_ref'] == 40


def main():
    """Run all tests."""
    print("🚀 Metrics tests")
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
