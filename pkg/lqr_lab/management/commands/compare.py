from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Compares the robust, nominal, OFU and Thompson sampling strategies on a preset system."
    experiment = 'compare'
