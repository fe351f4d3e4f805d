from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from lqr_lab.validation import run_suite


class Command(BaseCommand):
    help = "Runs the numerical checks of the regret analysis on random instances."

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--instances', type=int, default=20, help="Random instances per check")
        parser.add_argument('--out', help="Write the report as CSV")

    def handle(self, *args, **options):
        if options['instances'] < 1:
            raise CommandError("--instances must be at least 1")
        report = run_suite(seed=options['seed'], instances=options['instances'])
        summary = report.groupby('check', sort=False)['passed'].agg(['sum', 'count'])
        for check, row in summary.iterrows():
            self.stdout.write(f"{check:<20} {int(row['sum'])}/{int(row['count'])}")
        if options.get('out'):
            target = Path(options['out'])
            target.parent.mkdir(parents=True, exist_ok=True)
            report.to_csv(target, index=False, float_format='%.17g')
        failed = report[~report['passed']]
        if not failed.empty:
            raise CommandError(f"{len(failed)} checks failed: {', '.join(sorted(set(failed['check'])))}")
        self.stdout.write(self.style.SUCCESS(f"All {len(report)} checks passed"))
