"""Shared argument handling of the experiment commands."""

import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from lqr_lab.exceptions import LabError
from lqr_lab.harness import ExperimentConfig, load_config, parse_data_policies, run_experiment, write_experiment

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):
    experiment = 'compare'
    presets = ('laplacian', 'large_transient', 'custom')

    def add_arguments(self, parser):
        parser.add_argument('--preset', choices=self.presets, help="System preset")
        parser.add_argument('--trials', type=int, help="Number of seeded trials per strategy")
        parser.add_argument('--horizon', type=int, help="Steps per trial after the warmup")
        parser.add_argument('--seed', type=int, help="Base seed; trial i uses seed + i")
        parser.add_argument('--strategy', action='append', dest='strategies', help="Strategy to run (repeatable)")
        parser.add_argument('--error-multiplier', action='append', type=float, dest='multipliers',
                            help="Model-error multiplier (repeatable)")
        parser.add_argument('--schedule', choices=('doubling', 'linear'), help="Epoch length schedule")
        parser.add_argument('--exploration', choices=('std', 'variance'),
                            help="Whether the exploration standard deviation or variance decays as T^(-1/3)")
        parser.add_argument('--data-policy', action='append', dest='data_policies', metavar='STRATEGY=POLICY',
                            help="Data behind a strategy's re-estimates, epoch or all (repeatable)")
        parser.add_argument('--workers', type=int, help="Parallel worker processes")
        parser.add_argument('--out', help="Output directory for the plot data")
        parser.add_argument('--cfg', help="Experiment file of 'key = value' lines")

    def data_policies(self, items):
        if not items:
            return None
        try:
            return parse_data_policies(','.join(items))
        except ValueError as e:
            raise CommandError(str(e)) from e

    def build_config(self, options):
        overrides = {
            'experiment': self.experiment,
            'preset': options.get('preset'),
            'trials': options.get('trials'),
            'horizon': options.get('horizon'),
            'seed': options.get('seed'),
            'strategies': tuple(options['strategies']) if options.get('strategies') else None,
            'multipliers': tuple(options['multipliers']) if options.get('multipliers') else None,
            'schedule': options.get('schedule'),
            'exploration': options.get('exploration'),
            'data_policies': self.data_policies(options.get('data_policies')),
            'workers': options.get('workers'),
            'output_dir': options.get('out'),
        }
        if options.get('cfg'):
            return load_config(options['cfg'], settings.LQR_LAB, **overrides)
        return ExperimentConfig.from_settings(settings.LQR_LAB, **overrides)

    def handle(self, *args, **options):
        try:
            cfg = self.build_config(options)
            result = run_experiment(cfg)
            written = write_experiment(result)
        except LabError as e:
            raise CommandError(str(e)) from e
        except OSError as e:
            logger.error(f"Could not write results: {e}", exc_info=True)
            raise CommandError(f"Could not write results: {e}") from e

        self.stdout.write(f"{cfg.experiment} on {cfg.preset}: {cfg.trials} trials, horizon {cfg.horizon}")
        for panel in result.curve.panels:
            final = result.curve.final(panel)
            for strategy, row in final.iterrows():
                self.stdout.write(f"  {panel:>7} {strategy:<16} median {row['median']:.6g}  p90 {row['p90']:.6g}")
        if result.failures:
            self.stdout.write(self.style.WARNING(f"{len(result.failures)} trials failed or diverged"))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(written)} files to {cfg.output_dir}"))
