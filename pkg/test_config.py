"""
Tests for run configuration presets, validation and JSON round trips.
"""

import sys
import os
import json
import tempfile

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from config import RunConfig, default_run_config, load_run_config, preset_for, save_run_config
from errors import ConfigError, DataIOError


def test_default_config_uses_benchmark_preset():
    cfg = default_run_config('dw4', seed=7)
    assert cfg.schedule.sigma_max == 3.0
    assert cfg.net.input_dim == 8
    assert cfg.train.snis_samples == 2 and cfg.train.target_clip == 20.0
    assert cfg.train.seed == 7 and cfg.integrator.seed == 7
    assert cfg.out_dir == os.path.join('runs', 'dw4')


def test_family_fallback_presets():
    assert preset_for('gauss5')['schedule']['sigma_max'] == 10.0
    assert preset_for('gmm60') == preset_for('gmm40')
    assert default_run_config('gauss5').net.input_dim == 5
    try:
        preset_for('mystery3')
    except ConfigError:
        return
    raise AssertionError("unknown benchmark family accepted")


def test_dict_round_trip():
    cfg = default_run_config('gmm80', seed=3, out_dir='somewhere')
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.train.buffer_capacity == 20000


def test_partial_document_keeps_overrides():
    cfg = RunConfig.from_dict({
        'benchmark': {'id': 'gmm40', 'seed': 2},
        'train': {'batch_size': 16, 'n_outer': 3},
        'net': {'hidden_width': 32},
        'seed': 11,
    })
    assert cfg.train.batch_size == 16 and cfg.train.n_outer == 3
    assert cfg.train.lr == 5e-4
    assert cfg.net.hidden_width == 32 and cfg.net.input_dim == 2
    assert cfg.benchmark.seed == 2 and cfg.train.seed == 11


def test_unknown_keys_and_bad_values_rejected():
    documents = [
        {'benchmark': {'id': 'gmm40'}, 'extra': 1},
        {'benchmark': {'id': 'gmm40'}, 'train': {'learning_rate': 0.1}},
        {'benchmark': {'id': 'gmm40'}, 'net': {'depth': 3}},
        {'benchmark': {'id': 'gmm40'}, 'train': {'batch_size': 0}},
        {'benchmark': {'id': 'gmm40'}, 'seed': -1},
        {'benchmark': {'id': 'gmm40'}, 'schedule': {'sigma_min': 2.0, 'sigma_max': 1.0}},
    ]
    for document in documents:
        try:
            RunConfig.from_dict(document).build_schedule()
        except ConfigError:
            continue
        raise AssertionError(f"{document} accepted")


def test_file_round_trip_and_errors():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'nested', 'config.json')
        cfg = default_run_config('lj13', seed=1)
        save_run_config(cfg, path)
        assert load_run_config(path) == cfg

        broken = os.path.join(tmp, 'broken.json')
        with open(broken, 'w') as handle:
            handle.write('{"benchmark": ')
        try:
            load_run_config(broken)
        except ConfigError:
            pass
        else:
            raise AssertionError("invalid JSON accepted")
        try:
            load_run_config(os.path.join(tmp, 'absent.json'))
        except DataIOError:
            return
    raise AssertionError("missing config accepted")


def main():
    """Run all tests."""
    print("🚀 Configuration tests")
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
