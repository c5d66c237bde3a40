"""
Command Line Interface for the Importance Weighted Score Matching Toolkit

Binds the modules into commands: training, sampling (trained network or
estimated scores), exact reference sets, evaluation and the diagnostic
reports. Errors are printed to stderr as one JSON line and mapped to exit
codes (2 config, 3 numeric, 4 I/O).

Usage:
    python src/cli_interface.py [--threads N] [--log-level LEVEL] <command> [options]
"""

import sys
import os
import json
import argparse
import logging
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from analysis import ToyKlSpec, estimator_scaling_report, toy_kl_report
from config import (BENCHMARK_PRESETS, RunConfig, default_run_config, load_run_config, preset_for,
                    save_run_config)
from energy import build_energy, energy_from_description
from errors import ConfigError, IwsmError, error_payload
from metrics import evaluate
from numerics import Rng, worker_count
from sampler import IntegratorConfig, sample_reverse
from samples import SampleSet, load_reference_csv
from scorenet import load_checkpoint
from sde import VeSchedule
from trainer import snis_sweep, train, train_unweighted_ablation

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(item) for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got {text!r}") from e
    if not values:
        raise argparse.ArgumentTypeError("List must not be empty")
    return values


class IwsmCLI:
    """
    Command handlers; each returns a JSON-serializable summary printed to stdout.
    """

    def __init__(self, threads: Optional[int] = None):
        self.n_jobs = worker_count(threads)

    def _run_config(self, args: argparse.Namespace) -> RunConfig:
        if args.config:
            cfg = load_run_config(args.config)
            if args.seed is not None:
                cfg = RunConfig.from_dict({**cfg.to_dict(), 'seed': args.seed})
        elif args.benchmark:
            cfg = default_run_config(args.benchmark, seed=args.seed or 0)
        else:
            raise ConfigError("Pass --config or --benchmark")
        if getattr(args, 'n_outer', None) is not None:
            payload = cfg.to_dict()
            payload['train']['n_outer'] = args.n_outer
            cfg = RunConfig.from_dict(payload)
        if args.out:
            cfg.out_dir = args.out
        return cfg

    def cmd_train(self, args: argparse.Namespace) -> Dict[str, Any]:
        cfg = self._run_config(args)
        save_run_config(cfg, os.path.join(cfg.out_dir, 'resolved_config.json'))
        runner = train_unweighted_ablation if args.ablation else train
        result = runner(cfg.build_energy(), cfg.build_schedule(), cfg.net, cfg.train, cfg.out_dir,
                        n_jobs=self.n_jobs)
        return {
            'checkpoint': os.path.join(cfg.out_dir, 'ckpt_final.json'),
            'steps': result.checkpoint.step,
            'final_loss': float(result.log['loss'].iloc[-1]) if len(result.log) else None,
            'ablation': bool(args.ablation),
        }

    def cmd_sample(self, args: argparse.Namespace) -> Dict[str, Any]:
        checkpoint = load_checkpoint(args.checkpoint)
        f = energy_from_description(checkpoint.benchmark)
        sched = VeSchedule(**checkpoint.schedule)
        cfg = IntegratorConfig(n_steps=args.steps, score_source='network', checkpoint=args.checkpoint,
                               seed=args.seed)
        samples = sample_reverse(f, sched, cfg, args.n, net=checkpoint.build_net(), n_jobs=self.n_jobs)
        samples.to_csv(args.out)
        return {'out': args.out, 'n': samples.n, 'failures': samples.metadata['failures']}

    def cmd_dwes(self, args: argparse.Namespace) -> Dict[str, Any]:
        f = build_energy(args.benchmark, seed=args.benchmark_seed)
        sched = VeSchedule(**preset_for(args.benchmark)['schedule'])
        cfg = IntegratorConfig(n_steps=args.steps, score_source='estimated', n_inner=args.L,
                               target_clip=args.clip, seed=args.seed)
        samples = sample_reverse(f, sched, cfg, args.n, n_jobs=self.n_jobs)
        samples.to_csv(args.out)
        return {'out': args.out, 'n': samples.n, 'failures': samples.metadata['failures'],
                'wall_seconds': samples.metadata['wall_seconds']}

    def cmd_make_reference(self, args: argparse.Namespace) -> Dict[str, Any]:
        f = build_energy(args.benchmark, seed=args.benchmark_seed)
        samples = f.reference_sample(args.n, Rng(args.seed).substream('reference'))
        samples.seed = args.seed
        samples.to_csv(args.out)
        summary = {'out': args.out, 'n': samples.n}
        if args.export_means:
            if not hasattr(f, 'export_means'):
                raise ConfigError(f"{args.benchmark} has no mixture means to export")
            f.export_means(args.export_means)
            summary['means'] = args.export_means
        return summary

    def cmd_eval(self, args: argparse.Namespace) -> Dict[str, Any]:
        f = build_energy(args.benchmark, seed=args.benchmark_seed)
        generated = SampleSet.from_csv(args.samples, benchmark=args.benchmark)
        reference = load_reference_csv(args.reference, f.benchmark_id, f.dim)
        report = evaluate(generated, reference, f, seed=args.seed)
        if args.out:
            report.save(args.out)
        return report.to_dict()

    def cmd_toy_kl(self, args: argparse.Namespace) -> Dict[str, Any]:
        report = toy_kl_report(ToyKlSpec(mu1=args.mu1, mu2=args.mu2, sigma=args.sigma), out_path=args.out)
        return {'forward': report['forward'], 'reverse': report['reverse']}

    def cmd_diag(self, args: argparse.Namespace) -> Dict[str, Any]:
        report = estimator_scaling_report(args.L_list, args.S_list, args.reps, seed=args.seed,
                                          n_jobs=self.n_jobs, out_dir=args.out)
        return {'score_std_slope': report['score_std_slope'], 'exact_weights': report['exact_weights'],
                'out': args.out}

    def cmd_sweep(self, args: argparse.Namespace) -> Dict[str, Any]:
        cfg = self._run_config(args)
        save_run_config(cfg, os.path.join(cfg.out_dir, 'resolved_config.json'))
        f = cfg.build_energy()
        reference = SampleSet.from_csv(args.reference, benchmark=f.benchmark_id) if args.reference else None
        table = snis_sweep(f, cfg.build_schedule(), cfg.net, cfg.train, cfg.out_dir, s_values=args.s_list,
                           reference=reference, n_eval=args.n_eval, eval_steps=cfg.integrator.n_steps,
                           n_jobs=self.n_jobs)
        return {'table': table.to_dict(orient='records'), 'out': os.path.join(cfg.out_dir, 'sweep.csv')}

    def cmd_benchmarks(self, args: argparse.Namespace) -> Dict[str, Any]:
        return BENCHMARK_PRESETS


class JsonErrorParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors raise ConfigError, so main() reports them like any other failure."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> JsonErrorParser:
    parser = JsonErrorParser(prog='iwsm', description='Importance weighted score matching samplers')
    parser.add_argument('--threads', type=int, default=None, help='Worker cap (falls back to IWSM_THREADS)')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command', required=True)

    def run_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument('--config', help='RunConfig JSON (e.g. a resolved_config.json)')
        sub.add_argument('--benchmark', help='Benchmark id when no --config is given')
        sub.add_argument('--out', help='Output directory')
        sub.add_argument('--seed', type=int, default=None)
        sub.add_argument('--n-outer', dest='n_outer', type=int, default=None)

    sub = commands.add_parser('train', help='Train a score network')
    run_options(sub)
    sub.add_argument('--ablation', action='store_true', help='Uniform weights instead of SNIS')
    sub.set_defaults(handler='cmd_train')

    sub = commands.add_parser('sample', help='Sample from a trained checkpoint')
    sub.add_argument('--checkpoint', required=True)
    sub.add_argument('--n', type=int, default=1000)
    sub.add_argument('--steps', type=int, default=1000)
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler='cmd_sample')

    sub = commands.add_parser('dwes', help='Sample with estimated scores, no network')
    sub.add_argument('--benchmark', required=True)
    sub.add_argument('--L', type=int, default=1000)
    sub.add_argument('--n', type=int, default=1000)
    sub.add_argument('--steps', type=int, default=1000)
    sub.add_argument('--clip', type=float, default=None)
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--benchmark-seed', dest='benchmark_seed', type=int, default=0)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler='cmd_dwes')

    sub = commands.add_parser('make-reference', help='Exact reference samples')
    sub.add_argument('--benchmark', required=True)
    sub.add_argument('--n', type=int, default=1000)
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--benchmark-seed', dest='benchmark_seed', type=int, default=0)
    sub.add_argument('--export-means', dest='export_means', default=None)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler='cmd_make_reference')

    sub = commands.add_parser('eval', help='Compare generated samples with a reference set')
    sub.add_argument('--samples', required=True)
    sub.add_argument('--reference', required=True)
    sub.add_argument('--benchmark', required=True)
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--benchmark-seed', dest='benchmark_seed', type=int, default=0)
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler='cmd_eval')

    sub = commands.add_parser('toy-kl', help='Forward vs reverse KL on a two-mode toy')
    sub.add_argument('--mu1', type=float, default=-3.0)
    sub.add_argument('--mu2', type=float, default=3.0)
    sub.add_argument('--sigma', type=float, default=1.0)
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler='cmd_toy_kl')

    sub = commands.add_parser('diag', help='Estimator scaling report')
    sub.add_argument('--L-list', dest='L_list', type=_int_list, default=[100, 400, 1600, 10000])
    sub.add_argument('--S-list', dest='S_list', type=_int_list, default=[8, 32, 128])
    sub.add_argument('--reps', type=int, default=500)
    sub.add_argument('--seed', type=int, default=0)
    sub.add_argument('--out', default=None)
    sub.set_defaults(handler='cmd_diag')

    sub = commands.add_parser('sweep', help='SNIS quantity sweep with the unweighted ablation')
    run_options(sub)
    sub.add_argument('--s-list', dest='s_list', type=_int_list, default=[2, 5, 10])
    sub.add_argument('--n-eval', dest='n_eval', type=int, default=1000)
    sub.add_argument('--reference', default=None)
    sub.set_defaults(handler='cmd_sweep')

    sub = commands.add_parser('benchmarks', help='Print the benchmark preset table')
    sub.set_defaults(handler='cmd_benchmarks')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one command and return the process exit code.

    Args:
        argv (Optional[List[str]]): Arguments without the program name

    Returns:
        int: 0 on success, the error's exit code otherwise
    """
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        logger.error(f"Invalid arguments: {e}")
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return e.exit_code
    logging.getLogger().setLevel(getattr(logging, args.log_level))

    try:
        cli = IwsmCLI(threads=args.threads)
        summary = getattr(cli, args.handler)(args)
    except IwsmError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}")
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
