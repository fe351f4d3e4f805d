from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Demand forecasting study: constrained against unconstrained synthesis under bounded noise."
    experiment = 'demand'
    presets = ('demand', 'custom')
