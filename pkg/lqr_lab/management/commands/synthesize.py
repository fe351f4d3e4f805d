import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from lqr_lab.exceptions import LabError
from lqr_lab.harness import load_synthesis_problem
from lqr_lab.sls import realize_controller, robustness_margin, synthesize_robust, validate_realization

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Robust FIR synthesis for a single estimate read from a 'key = value' file."

    def add_arguments(self, parser):
        parser.add_argument('--cfg', required=True, help="File with A, B, eps_A, eps_B and optional Q, R, F, gamma")
        parser.add_argument('--out', help="Write the synthesized response as JSON")

    def handle(self, *args, **options):
        try:
            est, cfg, Q, R = load_synthesis_problem(options['cfg'])
            resp, objective = synthesize_robust(est, cfg, Q, R)
        except (LabError, ValueError) as e:
            raise CommandError(str(e)) from e
        except OSError as e:
            raise CommandError(f"Could not read {options['cfg']}: {e}") from e

        controller = realize_controller(resp)
        residual = validate_realization(resp, est)
        if residual > 1e-6:
            logger.warning(f"Realized controller deviates from the response by {residual:.3g}")

        self.stdout.write(f"gamma      {resp.gamma:.6g}")
        self.stdout.write(f"objective  {objective:.6g}")
        self.stdout.write(f"order      {controller.order}")
        self.stdout.write(f"margin     {robustness_margin(resp, cfg):.6g}")
        self.stdout.write(f"residual   {residual:.3g}")

        if options.get('out'):
            target = Path(options['out'])
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(json.dumps(resp.to_dict(), indent=2))
            except OSError as e:
                logger.error(f"Could not write {target}: {e}", exc_info=True)
                raise CommandError(f"Could not write {target}: {e}") from e
            self.stdout.write(self.style.SUCCESS(f"Wrote {target}"))
