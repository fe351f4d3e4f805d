from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Regret of the adaptive strategies with their model-error radii inflated by multipliers."
    experiment = 'error_scaling'
    presets = ('laplacian', 'custom')
