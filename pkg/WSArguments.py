import argparse
import os
from WSExceptions import ArgumentException
from DeepONet import ABLATIONS
from WoundGeometry import ShapeKind
from DataPipe import YEAR_SCENARIOS

from CustomLogger import logger, setDebugMode

COMMANDS = ('simulate', 'gen-train', 'gen-test', 'gen-year', 'train', 'eval', 'predict', 'bench', 'export-plot')

def _add_geometry(parser):
    parser.add_argument('--shape', type=str, choices=[k.value for k in ShapeKind], help='Wound shape (default from config)')
    parser.add_argument('--xcut', type=float, help='Wound cut point on the x-axis in cm')
    parser.add_argument('--ycut', type=float, help='Wound cut point on the y-axis in cm')
    parser.add_argument('--weights', type=float, nargs=3, help='Convex weights of rectangle, rhombus and ellipse')
    parser.add_argument('--params', type=str, help='Patient parameter file (name = value), default: range midpoints')

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='startWoundSurrogate.py',
                                     description="Post-burn wound contraction simulator and DeepONet surrogate.")
    parser.add_argument('--configfile', type=str, default='data/config.yml', help='Config file path')
    parser.add_argument('--outdir', type=str, default='runs', help='Directory receiving the run directories')
    parser.add_argument('--jobs', type=int, default=1, help='Parallel simulations for dataset generation')
    parser.add_argument('-v', '--verbose', action='store_true', default=False, required=False, help='Enable verbose mode')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Run one finite element simulation')
    _add_geometry(simulate)
    simulate.add_argument('--t-end', type=float, help='Simulated days (default from config)')

    for name, what in (('gen-train', 'training'), ('gen-test', 'convex test')):
        generate = commands.add_parser(name, help=f'Generate a {what} dataset')
        generate.add_argument('--n-sims', type=int, help='Number of simulations (default from config)')

    year = commands.add_parser('gen-year', help='Extend a dataset with one-year simulations')
    year.add_argument('--base', type=str, required=True, help='Dataset directory to extend')
    year.add_argument('--scenario', type=str, choices=sorted(YEAR_SCENARIOS), required=True)
    year.add_argument('--full-scale', action='store_true', default=False, help='Use the full simulation counts')

    train = commands.add_parser('train', help='Train a DeepONet on a dataset')
    train.add_argument('--dataset', type=str, required=True, help='Dataset directory')
    train.add_argument('--ablation', type=str, choices=sorted(ABLATIONS), default='final')
    train.add_argument('--warm-start', type=str, help='Model file whose parameters initialise the network')
    train.add_argument('--epochs', type=int, help='Override the configured epoch count')

    evaluate = commands.add_parser('eval', help='Evaluate models on a test dataset')
    evaluate.add_argument('--dataset', type=str, required=True, help='Test dataset directory')
    evaluate.add_argument('--model', type=str, help='Model file to evaluate')
    evaluate.add_argument('--ablation', type=str, choices=['all'], help="'all' trains and evaluates every ablation")
    evaluate.add_argument('--train-dataset', type=str, help='Training dataset for --ablation all')

    predict = commands.add_parser('predict', help='Predict a displacement field and RSAW curve')
    predict.add_argument('--model', type=str, required=True)
    _add_geometry(predict)
    predict.add_argument('--t-end', type=float, help='Prediction horizon in days (default from config)')
    predict.add_argument('--boundary-only', action='store_true', default=False, help='Predict on the wound rim only')

    bench = commands.add_parser('bench', help='Time the surrogate against the simulator')
    bench.add_argument('--model', type=str, required=True)
    _add_geometry(bench)

    export = commands.add_parser('export-plot', help='Collect the CSV files behind the plots')
    export.add_argument('--train-run', type=str, help='Run directory of a train command')
    export.add_argument('--eval-run', type=str, help='Run directory of an eval command')
    return parser

class WSArguments:
    """
    WSArguments is a singleton class that handles the command line of the
    WoundSurrogate entry point.
    Attributes:
        CONFIGFILE (str): Path to the configuration file.
        OUTDIR (str): Directory receiving the run directories.
        COMMAND (str): Selected sub-command.
        JOBS (int): Parallel simulations for dataset generation.
        OPTIONS (argparse.Namespace): All parsed options, sub-command specific ones included.
    """

    CONFIGFILE = ''
    OUTDIR = ''
    COMMAND = ''
    JOBS = 1
    OPTIONS = None

    _instance = None

    def __new__(cls, *args, **kwargs):
        if not cls._instance:
            cls._instance = super(WSArguments, cls).__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self, argv=None):
        if self._initialized:
            return
        self._initialized = True
        logger.debug("init WSArguments")

        args = build_parser().parse_args(argv)

        if args.verbose:
            setDebugMode()

        logger.debug(args)

        if not os.path.isfile(args.configfile):
            raise ArgumentException(argument=args.configfile, message="Config File does not exist")

        if args.jobs < 1:
            raise ArgumentException(argument=args.jobs, message="--jobs must be at least 1")

        for name in ('params', 'base', 'dataset', 'model', 'warm_start', 'train_dataset', 'train_run', 'eval_run'):
            path = getattr(args, name, None)
            if path is not None and not os.path.exists(path):
                raise ArgumentException(argument=path, message=f"--{name.replace('_', '-')} does not exist")

        if args.command == 'eval':
            if args.ablation == 'all' and args.train_dataset is None:
                raise ArgumentException(argument="--train-dataset", message="required with --ablation all")
            if args.ablation is None and args.model is None:
                raise ArgumentException(argument="--model", message="eval needs --model or --ablation all")

        if args.command == 'export-plot' and args.train_run is None and args.eval_run is None:
            raise ArgumentException(argument="--train-run/--eval-run", message="nothing to export")

        self.CONFIGFILE = args.configfile
        self.OUTDIR = args.outdir
        self.COMMAND = args.command
        self.JOBS = args.jobs
        self.VERBOSE = args.verbose
        self.OPTIONS = args

    @classmethod
    def reset(cls):
        cls._instance = None
