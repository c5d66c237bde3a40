"""
Tests for benchmark energies, gradients and exact reference sampling.
"""

import sys
import os
import json
import tempfile

import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from energy import (GMM_SCALES, DoubleWellEnergy, GmmEnergy, GmmSpec, LennardJonesEnergy, build_energy,
                    energy_from_description)
from errors import ConfigError, SingularConfigurationError
from numerics import Rng


def _central_difference(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f.energy(x + step) - f.energy(x - step)) / (2.0 * h)
    return grad


def _lattice(n_particles, space_dim, spacing, jitter, seed):
    side = int(np.ceil(n_particles ** (1.0 / space_dim)))
    grid = np.stack(np.meshgrid(*[np.arange(side)] * space_dim, indexing='ij'), axis=-1).reshape(-1, space_dim)
    points = spacing * grid[:n_particles].astype(float)
    points += jitter * Rng(seed).normal(size=points.shape)
    return points.ravel()


def test_gmm_means_are_seeded_and_bounded():
    spec = GmmSpec.from_seed(40, seed=0)
    again = GmmSpec.from_seed(40, seed=0)
    assert spec.means.shape == (40, 2)
    assert np.array_equal(spec.means, again.means)
    assert np.all(np.abs(spec.means) < 40)
    assert not np.array_equal(spec.means, GmmSpec.from_seed(40, seed=1).means)
    assert spec.cov_scale == 40.0


def test_gmm_scales():
    for m, scale in GMM_SCALES.items():
        assert build_energy(f'gmm{m}').scale == scale


def test_gmm_gradient_matches_finite_differences():
    f = build_energy('gmm40')
    rng = Rng(3)
    for _ in range(5):
        x = rng.uniform(-45.0, 45.0, size=2)
        assert np.allclose(f.grad_energy(x), _central_difference(f, x), rtol=1e-5, atol=1e-7)


def test_gmm_energy_sign_near_and_far_from_means():
    f = build_energy('gmm40')
    # The own component contributes exp(0) = 1 to the sum.
    assert f.energy(f.means[0]) <= 0.0
    assert f.energy(np.array([1000.0, 1000.0])) > 0.0


def test_normalized_view_rescales_energy_and_gradient():
    f = build_energy('gmm40')
    g = f.normalized()
    y = np.array([[0.2, -0.4], [0.7, 0.1]])
    assert np.allclose(g.energy_batch(y), f.energy_batch(f.scale * y))
    assert np.allclose(g.grad_batch(y), f.scale * f.grad_batch(f.scale * y))
    assert g.scale == 1.0
    gauss = build_energy('gauss2')
    assert gauss.normalized() is gauss


def test_gauss_energy():
    f = build_energy('gauss3')
    x = np.array([1.0, -2.0, 0.5])
    assert abs(f.energy(x) - 0.5 * (x ** 2).sum()) < 1e-15
    assert np.array_equal(f.grad_energy(x), x)


def test_bimodal_gradient_matches_finite_differences():
    f = build_energy('bimodal1d', mu1=-2.0, mu2=2.0, sigma=1.0)
    for value in (-3.0, -0.4, 0.0, 1.7):
        x = np.array([value])
        assert np.allclose(f.grad_energy(x), _central_difference(f, x), rtol=1e-6, atol=1e-8)


def test_double_well_gradient_matches_finite_differences():
    f = build_energy('dw4')
    x = _lattice(4, 2, spacing=3.5, jitter=0.3, seed=5)
    assert np.allclose(f.grad_energy(x), _central_difference(f, x, h=1e-6), rtol=1e-5, atol=1e-6)


def test_lennard_jones_gradient_matches_finite_differences():
    f = build_energy('lj13')
    x = _lattice(13, 3, spacing=1.2, jitter=0.05, seed=9)
    assert np.allclose(f.grad_energy(x), _central_difference(f, x, h=1e-6), rtol=1e-5, atol=1e-7)


def test_lennard_jones_singular_configuration():
    f = build_energy('lj13')
    x = _lattice(13, 3, spacing=1.2, jitter=0.0, seed=0).reshape(13, 3)
    x[1] = x[0]
    flat = x.ravel()
    assert np.isposinf(f.energy_batch(flat[None, :])[0])
    assert np.all(f.grad_batch(flat[None, :]) == 0.0)
    try:
        f.energy(flat)
    except SingularConfigurationError:
        return
    raise AssertionError("singular configuration accepted")


def test_energy_batch_matches_single_evaluations():
    f = build_energy('dw4')
    X = np.stack([_lattice(4, 2, 3.5, 0.3, seed) for seed in range(4)])
    assert np.allclose(f.energy_batch(X), [f.energy(x) for x in X])


def test_gmm_with_symmetric_means_is_centrally_symmetric():
    means = np.array([[3.0, 1.0], [-3.0, -1.0], [5.0, -2.0], [-5.0, 2.0]])
    f = GmmEnergy(GmmSpec(m=4, means=means, cov_scale=2.0))
    X = Rng(6).uniform(-8.0, 8.0, size=(50, 2))
    assert np.allclose(f.energy_batch(X), f.energy_batch(-X), rtol=1e-12, atol=1e-12)
    assert np.allclose(f.grad_batch(X), -f.grad_batch(-X), rtol=1e-12, atol=1e-12)


def test_double_well_pair_values():
    pair = DoubleWellEnergy(n_particles=2, space_dim=2)
    assert abs(pair.energy(np.array([0.0, 0.0, 5.0, 0.0])) + 1.55) < 1e-12
    assert abs(pair.energy(np.array([0.0, 0.0, 4.0, 0.0]))) < 1e-15
    # Regular tetrahedron with edge d0 = 4: all six pairs sit at d0.
    corners = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    tetra = DoubleWellEnergy(n_particles=4, space_dim=3)
    assert abs(tetra.energy((np.sqrt(2.0) * corners).ravel())) < 1e-12


def test_lennard_jones_pair_at_r_m_is_zero():
    pair = LennardJonesEnergy(n_particles=2, space_dim=3, c_osc=0.0)
    assert pair.energy(np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])) == 0.0
    with_oscillator = LennardJonesEnergy(n_particles=2, space_dim=3)
    assert abs(with_oscillator.energy(np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])) - 0.125) < 1e-15


def test_particle_energies_are_translation_invariant():
    for benchmark_id, x in (('dw4', _lattice(4, 2, 3.5, 0.3, 5)), ('lj13', _lattice(13, 3, 1.2, 0.05, 9))):
        f = build_energy(benchmark_id)
        shift = np.tile(Rng(7).uniform(-3.0, 3.0, size=f.space_dim), f.n_particles)
        assert np.isclose(f.energy(x + shift), f.energy(x), rtol=1e-10, atol=1e-10)
        assert np.allclose(f.grad_energy(x + shift), f.grad_energy(x), rtol=1e-8, atol=1e-8)


def test_fused_evaluation_matches_separate_calls():
    cases = [
        (build_energy('gmm40'), Rng(8).uniform(-45.0, 45.0, size=(20, 2))),
        (build_energy('gmm40').normalized(), Rng(8).uniform(-1.0, 1.0, size=(20, 2))),
        (build_energy('bimodal1d'), np.linspace(-4.0, 4.0, 9).reshape(-1, 1)),
        (build_energy('dw4'), np.stack([_lattice(4, 2, 3.5, 0.3, seed) for seed in range(3)])),
        (build_energy('lj13'), np.stack([_lattice(13, 3, 1.2, 0.05, seed) for seed in range(3)])),
        (build_energy('gauss3'), Rng(8).normal(size=(5, 3))),
    ]
    for f, X in cases:
        energies, grads = f.energy_and_grad_batch(X)
        assert np.allclose(energies, f.energy_batch(X), rtol=1e-12, atol=1e-12), f.benchmark_id
        assert np.allclose(grads, f.grad_batch(X), rtol=1e-12, atol=1e-12), f.benchmark_id


def test_fused_evaluation_across_blocks_and_singular_rows():
    f = build_energy('gmm40')
    X = Rng(9).uniform(-45.0, 45.0, size=(10000, 2))
    energies, grads = f.energy_and_grad_batch(X)
    assert energies.shape == (10000,) and grads.shape == (10000, 2)
    assert np.allclose(energies, f.energy_batch(X), rtol=1e-12, atol=1e-12)
    assert np.allclose(grads[::997], [f.grad_energy(x) for x in X[::997]], rtol=1e-10, atol=1e-12)
    lj = build_energy('lj13')
    x = _lattice(13, 3, spacing=1.2, jitter=0.0, seed=0).reshape(13, 3)
    x[1] = x[0]
    energies, grads = lj.energy_and_grad_batch(x.ravel()[None, :])
    assert np.isposinf(energies[0]) and np.all(grads == 0.0)


def test_reference_samples_are_deterministic():
    f = build_energy('gmm40')
    a = f.reference_sample(500, Rng(0).substream('reference'))
    b = f.reference_sample(500, Rng(0).substream('reference'))
    assert a.points.shape == (500, 2)
    assert np.array_equal(a.points, b.points)
    gauss = build_energy('gauss1').reference_sample(20000, Rng(1))
    assert abs(gauss.points.mean()) < 0.05
    assert abs(gauss.points.var() - 1.0) < 0.05


def test_particle_systems_cannot_be_sampled_exactly():
    try:
        build_energy('lj13').reference_sample(10, Rng(0))
    except ConfigError:
        return
    raise AssertionError("exact sampling of LJ13 accepted")


def test_build_energy_rejects_unknown_ids_and_parameters():
    for benchmark_id, params in (('mystery7', {}), ('gmm40', {'means': 3}), ('dw4', {'epsilon': 1.0})):
        try:
            build_energy(benchmark_id, **params)
        except ConfigError:
            continue
        raise AssertionError(f"{benchmark_id} with {params} accepted")


def test_wrong_dimension_rejected():
    try:
        build_energy('gmm40').energy_batch(np.zeros((3, 5)))
    except ConfigError:
        return
    raise AssertionError("wrong dimension accepted")


def test_energy_from_description_round_trip():
    for benchmark_id in ('gmm40', 'dw4', 'lj13', 'gauss2', 'bimodal1d'):
        f = build_energy(benchmark_id)
        g = energy_from_description(f.describe())
        assert g.describe() == f.describe()


def test_export_gmm_means():
    f = build_energy('gmm40')
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'means.json')
        f.export_means(path)
        with open(path) as handle:
            payload = json.load(handle)
    assert payload['m'] == 40
    assert np.array_equal(np.array(payload['means']), f.means)


def main():
    """Run all tests."""
    print("🚀 Energy tests")
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
