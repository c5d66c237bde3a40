"""
Tests for the command line interface: exit codes, outputs and a small
train → sample → eval pipeline.
"""

import sys
import os
import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout

import pandas as pd

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from cli_interface import main as cli_main

TINY_RUN = {
    'benchmark': {'id': 'gauss2'},
    'net': {'hidden_layers': 1, 'hidden_width': 8, 'time_embed_dim': 4, 'fourier_features_x': 1},
    'train': {'batch_size': 8, 'snis_samples': 2, 'n_inner': 16, 'n_inner_steps': 2, 'n_outer': 1,
              'gen_per_outer': 20, 'gen_steps': 5, 'buffer_capacity': 50, 'checkpoint_every': 0},
    'integrator': {'n_steps': 5},
}


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli_main([str(arg) for arg in argv])
    return code, out.getvalue(), err.getvalue()


def test_benchmarks_table():
    code, out, _ = run_cli('benchmarks')
    assert code == 0
    table = json.loads(out)
    assert {'gmm40', 'dw4', 'lj13', 'lj55'} <= set(table)


def test_make_reference_is_reproducible():
    with tempfile.TemporaryDirectory() as tmp:
        first, second = os.path.join(tmp, 'a.csv'), os.path.join(tmp, 'b.csv')
        means = os.path.join(tmp, 'means.json')
        assert run_cli('make-reference', '--benchmark', 'gmm40', '--n', 300, '--seed', 4,
                       '--export-means', means, '--out', first)[0] == 0
        assert run_cli('make-reference', '--benchmark', 'gmm40', '--n', 300, '--seed', 4, '--out', second)[0] == 0
        with open(first, 'rb') as a, open(second, 'rb') as b:
            assert a.read() == b.read()
        with open(means) as handle:
            assert len(json.load(handle)['means']) == 40


def test_eval_of_reference_against_itself():
    with tempfile.TemporaryDirectory() as tmp:
        ref = os.path.join(tmp, 'ref.csv')
        report_path = os.path.join(tmp, 'metrics.json')
        run_cli('make-reference', '--benchmark', 'gmm40', '--n', 200, '--out', ref)
        code, out, _ = run_cli('eval', '--samples', ref, '--reference', ref, '--benchmark', 'gmm40',
                               '--out', report_path)
        assert code == 0
        report = json.loads(out)
        assert os.path.exists(report_path)
    assert report['w1'] < 1e-9 and report['w2'] < 1e-9
    assert report['e_tvd'] == 0.0 and report['s_tvd'] == 0.0


def test_error_exit_codes():
    code, _, err = run_cli('make-reference', '--benchmark', 'lj13', '--n', 10, '--out', 'unused.csv')
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])['error'] == 'ConfigError'

    with tempfile.TemporaryDirectory() as tmp:
        missing = os.path.join(tmp, 'absent.csv')
        code, _, err = run_cli('eval', '--samples', missing, '--reference', missing, '--benchmark', 'gmm40')
        assert code == 4
        code, _, _ = run_cli('sample', '--checkpoint', os.path.join(tmp, 'absent.json'), '--out', missing)
        assert code == 4
    assert run_cli('--threads', 0, 'benchmarks')[0] == 2
    assert run_cli('train')[0] == 2


def test_eval_rejects_reference_of_wrong_dimension():
    with tempfile.TemporaryDirectory() as tmp:
        generated = os.path.join(tmp, 'generated.csv')
        assert run_cli('make-reference', '--benchmark', 'gmm40', '--n', 20, '--out', generated)[0] == 0
        reference = os.path.join(tmp, 'wide_reference.csv')
        pd.DataFrame([[0.0, 1.0, 2.0]] * 20, columns=['dim_0', 'dim_1', 'dim_2']).to_csv(reference, index=False)
        code, _, err = run_cli('eval', '--samples', generated, '--reference', reference, '--benchmark', 'gmm40')
    assert code == 2
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload['error'] == 'ConfigError' and 'needs 2' in payload['message']


def test_usage_errors_print_the_json_error_line():
    for argv in (('benchmarks', '--no-such-flag'), ('make-reference', '--benchmark', 'gmm40', '--n', 'many',
                                                    '--out', 'unused.csv'), ('no-such-command',)):
        code, out, err = run_cli(*argv)
        assert code == 2 and out == ''
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload == {'error': 'ConfigError', 'message': payload['message'], 'exit_code': 2}
        assert payload['message'].startswith('iwsm')


def test_train_sample_eval_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        config_path = os.path.join(tmp, 'run.json')
        with open(config_path, 'w') as handle:
            json.dump(TINY_RUN, handle)
        run_dir = os.path.join(tmp, 'run')
        code, out, _ = run_cli('train', '--config', config_path, '--out', run_dir, '--seed', 3)
        assert code == 0
        summary = json.loads(out)
        assert summary['steps'] == 2 and not summary['ablation']
        assert os.path.exists(os.path.join(run_dir, 'resolved_config.json'))
        with open(os.path.join(run_dir, 'resolved_config.json')) as handle:
            assert json.load(handle)['seed'] == 3

        samples = os.path.join(tmp, 'samples.csv')
        code, out, _ = run_cli('sample', '--checkpoint', summary['checkpoint'], '--n', 50, '--steps', 5,
                               '--out', samples)
        assert code == 0 and json.loads(out)['n'] == 50
        assert pd.read_csv(samples).shape == (50, 2)

        ref = os.path.join(tmp, 'ref.csv')
        run_cli('make-reference', '--benchmark', 'gauss2', '--n', 50, '--out', ref)
        code, out, _ = run_cli('eval', '--samples', samples, '--reference', ref, '--benchmark', 'gauss2')
        assert code == 0
        assert json.loads(out)['w2'] > 0.0


def test_ablation_flag():
    with tempfile.TemporaryDirectory() as tmp:
        config_path = os.path.join(tmp, 'run.json')
        with open(config_path, 'w') as handle:
            json.dump(TINY_RUN, handle)
        code, out, _ = run_cli('train', '--config', config_path, '--out', os.path.join(tmp, 'abl'), '--ablation')
        assert code == 0 and json.loads(out)['ablation']
        with open(os.path.join(tmp, 'abl', 'ckpt_final.json')) as handle:
            assert json.load(handle)['extra']['weighting'] == 'uniform'


def test_dwes_and_diagnostics_commands():
    with tempfile.TemporaryDirectory() as tmp:
        out_csv = os.path.join(tmp, 'dwes.csv')
        code, out, _ = run_cli('dwes', '--benchmark', 'gauss1', '--L', 16, '--n', 20, '--steps', 5, '--out', out_csv)
        assert code == 0 and json.loads(out)['n'] + json.loads(out)['failures'] == 20

        code, out, _ = run_cli('toy-kl', '--out', os.path.join(tmp, 'toy.json'))
        assert code == 0
        assert abs(json.loads(out)['forward']['var'] - 10.0) < 1e-4

        code, out, _ = run_cli('diag', '--L-list', '8,16', '--S-list', '4', '--reps', 3, '--out', tmp)
        assert code == 0
        assert os.path.exists(os.path.join(tmp, 'diag.json'))


def main():
    """Run all tests."""
    print("🚀 CLI tests")
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
