"""Experiment configuration, multi-trial execution, percentile aggregation and plot-data files."""

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path
from typing import Optional

import chardet
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .adaptive import DATA_POLICIES, EpochSchedule, WarmupConfig, regret_of, run_baseline, run_demand, run_robust_adaptive
from .baselines import OFUConfig, TSConfig
from .exceptions import ConfigError, LabError
from .linsys import OVERFLOW_GUARD, LinearSystem
from .sls import SynthesisConfig
from .sysid import ERROR_POLICIES, ParamEstimate

logger = logging.getLogger(__name__)

EXPERIMENTS = ('compare', 'error_scaling', 'demand')
PRESETS = ('laplacian', 'large_transient', 'demand', 'custom')
STRATEGIES = ('robust', 'nominal', 'ofu', 'ts')
DEMAND_VARIANTS = ('constrained', 'unconstrained')
PANEL_COLUMNS = ['time', 'strategy', 'median', 'p90']
FLOAT_FORMAT = '%.17g'
ERROR_MULTIPLIERS = (1.0, 2.0, 5.0)
# Data behind each re-estimate. OFU and TS keep a running Gram matrix over everything seen.
DATA_POLICY_DEFAULTS = {
    'robust': 'epoch',
    'nominal': 'epoch',
    'ofu': 'all',
    'ts': 'all',
    'constrained': 'all',
    'unconstrained': 'all',
}
FIXED_DATA_POLICIES = ('ofu', 'ts')

LAPLACIAN_A = np.array([[1.01, 0.01, 0.0],
                        [0.01, 1.01, 0.01],
                        [0.0, 0.01, 1.01]])
LARGE_TRANSIENT_A = np.array([[2.0, 0.0, 0.0],
                              [4.0, 2.0, 0.0],
                              [0.0, 4.0, 2.0]])
DEMAND_A_D = np.array([[0.5, 0.1, 0.0],
                       [0.0, 0.5, 0.1],
                       [0.0, 0.0, 0.5]])

# Warmup length and exploration coefficient of each experiment protocol.
PROTOCOLS = {
    'laplacian': {'warmup_steps': 100, 'C_eta': 0.1},
    'large_transient': {'warmup_steps': 250, 'C_eta': 2.0},
    'demand': {'warmup_steps': 100, 'C_eta': 0.0},
    'custom': {'warmup_steps': 100, 'C_eta': 0.1},
    'error_scaling': {'warmup_steps': 300, 'C_eta': 1.0},
}

MATRIX_KEYS = ('A', 'B', 'Q', 'R', 'A_d')


def preset_system(name):
    """The plant of a named preset. ``demand`` is the Laplacian plant with expensive inputs."""
    I = np.eye(3)
    if name == 'laplacian':
        return LinearSystem(LAPLACIAN_A, I, 10 * I, I, sigma_w=1.0)
    if name == 'large_transient':
        return LinearSystem(LARGE_TRANSIENT_A, I, 10 * I, I, sigma_w=1.0)
    if name == 'demand':
        return LinearSystem(LAPLACIAN_A, I, I, 1e3 * I, sigma_w=1.0)
    raise ConfigError(f"Unknown preset: {name}")


def _as_tuple(M):
    return None if M is None else tuple(tuple(float(v) for v in row) for row in np.atleast_2d(M))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = 'compare'
    preset: Optional[str] = None
    strategies: tuple = ()
    trials: int = 100
    horizon: int = 10_000
    seed: int = 0
    warmup_steps: Optional[int] = None
    warmup_sigma: float = 1.0
    schedule: str = 'doubling'
    C_T: Optional[int] = None
    C_eta: Optional[float] = None
    exploration: str = 'std'
    error_policy: str = 'actual'
    multipliers: tuple = ()
    data_policies: tuple = ()
    fir_length: int = 12
    gamma: Optional[float] = 0.98
    solver_tol: float = 1e-6
    solver_max_iters: int = 20_000
    lam: float = 1e-5
    min_epoch: int = 10
    det_factor: float = 2.0
    tau: int = 500
    c: float = 0.1
    workers: int = 1
    output_dir: str = 'results'
    sample_points: int = 60
    sigma_w: float = 1.0
    A: Optional[tuple] = None
    B: Optional[tuple] = None
    Q: Optional[tuple] = None
    R: Optional[tuple] = None
    A_d: Optional[tuple] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"Unknown experiment: {self.experiment}")
        if self.preset is None:
            object.__setattr__(self, 'preset', 'demand' if self.experiment == 'demand' else 'laplacian')
        if self.preset not in PRESETS:
            raise ConfigError(f"Unknown preset: {self.preset}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.sample_points < 2:
            raise ConfigError("at least two sample points are needed")
        if self.error_policy not in ERROR_POLICIES:
            raise ConfigError(f"Unknown error policy: {self.error_policy}")
        if self.gamma == 'search':
            object.__setattr__(self, 'gamma', None)
        for key in MATRIX_KEYS:
            object.__setattr__(self, key, _as_tuple(getattr(self, key)))
        multipliers = self.multipliers or (ERROR_MULTIPLIERS if self.experiment == 'error_scaling' else (1.0,))
        object.__setattr__(self, 'multipliers', tuple(float(m) for m in multipliers))
        if any(m <= 0 for m in self.multipliers):
            raise ConfigError("error multipliers must be positive")

        allowed = DEMAND_VARIANTS if self.experiment == 'demand' else STRATEGIES
        strategies = tuple(self.strategies) or self._default_strategies()
        unknown = [s for s in strategies if s not in allowed]
        if unknown:
            raise ConfigError(f"Unknown strategies for {self.experiment}: {', '.join(unknown)}")
        object.__setattr__(self, 'strategies', strategies)
        object.__setattr__(self, 'data_policies', self._resolve_data_policies())

        protocol = PROTOCOLS['error_scaling' if self.experiment == 'error_scaling' else self.preset]
        if self.warmup_steps is None:
            object.__setattr__(self, 'warmup_steps', protocol['warmup_steps'])
        if self.C_eta is None:
            object.__setattr__(self, 'C_eta', protocol['C_eta'])
        if self.C_T is None:
            object.__setattr__(self, 'C_T', max(self.warmup_steps, 1))
        if self.preset == 'custom' and (self.A is None or self.B is None):
            raise ConfigError("the custom preset needs the matrices A and B")
        # Builds every component once so that bad values fail here rather than inside a trial.
        self.system()
        self.epoch_schedule()
        self.warmup()
        self.synthesis()

    def _resolve_data_policies(self):
        given = dict(self.data_policies)
        for strategy, policy in given.items():
            if strategy not in DATA_POLICY_DEFAULTS:
                raise ConfigError(f"Unknown strategy in data policies: {strategy}")
            if policy not in DATA_POLICIES:
                raise ConfigError(f"Unknown data policy for {strategy}: {policy}")
            if strategy in FIXED_DATA_POLICIES and policy != 'all':
                raise ConfigError(f"{strategy} always estimates from all data")
        return tuple((s, given.get(s, DATA_POLICY_DEFAULTS[s])) for s in self.strategies)

    def data_policy(self, strategy):
        return dict(self.data_policies)[strategy]

    def _default_strategies(self):
        if self.experiment == 'demand':
            return DEMAND_VARIANTS
        if self.experiment == 'error_scaling':
            return ('robust', 'ofu', 'ts')
        return STRATEGIES

    @classmethod
    def from_settings(cls, defaults, **overrides):
        """Starts from a settings dictionary (``settings.LQR_LAB``) and applies ``overrides``."""
        base = {
            'trials': defaults.get('TRIALS', 100),
            'workers': defaults.get('WORKERS', 1),
            'horizon': defaults.get('HORIZON', 10_000),
            'seed': defaults.get('SEED', 0),
            'output_dir': str(defaults.get('OUTPUT_DIR', 'results')),
            'solver_tol': defaults.get('SOLVER_TOL', 1e-6),
            'solver_max_iters': defaults.get('SOLVER_MAX_ITERS', 20_000),
            'fir_length': defaults.get('FIR_LENGTH', 12),
            'lam': defaults.get('RLS_LAMBDA', 1e-5),
            'min_epoch': defaults.get('SWITCH_MIN_EPOCH', 10),
            'det_factor': defaults.get('SWITCH_DET_FACTOR', 2.0),
            'tau': defaults.get('TS_TAU', 500),
        }
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def system(self):
        """The true system of one trial; for the demand experiment, the known plant."""
        if self.preset != 'custom':
            return preset_system(self.preset)
        A = np.array(self.A)
        n = A.shape[0]
        B = np.array(self.B)
        Q = np.eye(n) if self.Q is None else np.array(self.Q)
        R = np.eye(B.shape[1]) if self.R is None else np.array(self.R)
        try:
            return LinearSystem(A, B, Q, R, sigma_w=self.sigma_w)
        except ValueError as e:
            raise ConfigError(f"invalid custom system: {e}") from e

    def disturbance_matrix(self):
        return DEMAND_A_D if self.A_d is None else np.array(self.A_d)

    def warmup(self):
        return WarmupConfig(steps=self.warmup_steps, sigma_u=self.warmup_sigma)

    def epoch_schedule(self):
        return EpochSchedule(mode=self.schedule, C_T=self.C_T, C_eta=self.C_eta, exploration=self.exploration)

    def synthesis(self):
        return SynthesisConfig(F=self.fir_length, gamma_fixed=self.gamma, tol=self.solver_tol,
                               max_iters=self.solver_max_iters)

    def ofu(self):
        return OFUConfig(min_epoch=self.min_epoch, det_factor=self.det_factor)

    def ts(self):
        return TSConfig(tau=self.tau, min_epoch=self.min_epoch, det_factor=self.det_factor)

    def variants(self):
        """(label, strategy, multiplier) for every curve of the experiment."""
        if self.experiment == 'error_scaling':
            return [(f"{s}@{m:g}", s, m) for s in self.strategies for m in self.multipliers]
        return [(s, s, self.multipliers[0]) for s in self.strategies]

    def to_dict(self):
        data = asdict(self)
        data['strategies'] = list(self.strategies)
        data['multipliers'] = list(self.multipliers)
        data['data_policies'] = dict(self.data_policies)
        return data

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def parse_matrix(text):
    """Row-major matrix text: rows separated by ';', entries by spaces or commas."""
    rows = []
    for row in text.split(';'):
        entries = [v for v in re.split(r'[,\s]+', row.strip()) if v]
        if entries:
            try:
                rows.append([float(v) for v in entries])
            except ValueError as e:
                raise ConfigError(f"invalid matrix entry in '{text}': {e}") from e
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError(f"matrix rows must be nonempty and of equal length: '{text}'")
    return np.array(rows)


def _parse_list(text):
    return [v for v in re.split(r'[,\s]+', text.strip()) if v]


def parse_data_policies(text):
    """'robust=epoch, nominal=all' as ((strategy, policy), ...)."""
    pairs = []
    for item in _parse_list(text):
        strategy, sep, policy = item.partition('=')
        if not sep:
            raise ValueError(f"expected strategy=policy, got '{item}'")
        pairs.append((strategy, policy))
    return tuple(pairs)


def _gamma_value(text):
    """A fixed gamma, or the word 'search' for a grid search."""
    return 'search' if text.strip().lower() == 'search' else float(text)


_FIELD_PARSERS = {
    'strategies': lambda v: tuple(_parse_list(v)),
    'multipliers': lambda v: tuple(float(m) for m in _parse_list(v)),
    'data_policies': parse_data_policies,
    'gamma': _gamma_value,
}
for _key in MATRIX_KEYS:
    _FIELD_PARSERS[_key] = parse_matrix


def _field_parser(f):
    if f.name in _FIELD_PARSERS:
        return _FIELD_PARSERS[f.name]
    kind = str(f.type)
    if 'int' in kind:
        return int
    if 'float' in kind:
        return float
    return str


CONFIG_KEYS = {f.name: _field_parser(f) for f in fields(ExperimentConfig)}


def read_key_values(path, allowed):
    """Reads a ``key = value`` file, decoded with the encoding chardet detects.

    ``allowed`` maps each key to its value parser. '#' starts a comment.
    """
    raw = Path(path).read_bytes()
    detected = chardet.detect(raw)
    encoding = detected['encoding'] if detected['encoding'] else 'utf-8'
    try:
        text = raw.decode(encoding)
    except (UnicodeDecodeError, LookupError):
        text = raw.decode('utf-8')
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            values[key] = allowed[key](value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {e}") from e
    return values


def load_config(path, defaults=None, **overrides):
    """Settings defaults < config file < explicit overrides."""
    values = read_key_values(path, CONFIG_KEYS)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if defaults is not None:
        return ExperimentConfig.from_settings(defaults, **values)
    return ExperimentConfig(**values)


SYNTHESIS_KEYS = {
    'A': parse_matrix,
    'B': parse_matrix,
    'Q': parse_matrix,
    'R': parse_matrix,
    'eps_A': float,
    'eps_B': float,
    'F': int,
    'C_x': float,
    'C_u': float,
    'rho': float,
    'alpha': float,
    'gamma': _gamma_value,
}


def load_synthesis_problem(path):
    """Reads an estimate and synthesis settings; returns (ParamEstimate, SynthesisConfig, Q, R)."""
    values = read_key_values(path, SYNTHESIS_KEYS)
    missing = [k for k in ('A', 'B') if k not in values]
    if missing:
        raise ConfigError(f"{path}: missing {', '.join(missing)}")
    A, B = values['A'], values['B']
    n, p = A.shape[0], B.shape[1]
    Q = values.get('Q', np.eye(n))
    R = values.get('R', np.eye(p))
    cfg_fields = {k: values[k] for k in ('F', 'C_x', 'C_u', 'rho', 'alpha') if k in values}
    gamma = values.get('gamma')
    cfg = SynthesisConfig(gamma_fixed=None if gamma == 'search' else gamma, **cfg_fields)
    est = ParamEstimate(A, B, values.get('eps_A', 0.0), values.get('eps_B', 0.0))
    return est, cfg, Q, R


def sample_times(horizon, points=60):
    """Log-spaced integer steps from 1 to the horizon."""
    grid = np.logspace(0.0, np.log10(horizon), points)
    return np.unique(np.clip(np.round(grid).astype(int), 1, horizon))


def _pad(curve, horizon, fill):
    if curve.size >= horizon:
        return curve[:horizon]
    return np.concatenate([curve, np.full(horizon - curve.size, fill)])


def cost_curve(trace):
    """Infinite-horizon cost of the controller in force at each step, clamped at the overflow guard."""
    if not trace.epochs:
        return np.full(trace.horizon, OVERFLOW_GUARD)
    costs = np.minimum([e.cost for e in trace.epochs], OVERFLOW_GUARD)
    curve = np.repeat(costs, [e.length for e in trace.epochs])
    return _pad(curve, trace.horizon, OVERFLOW_GUARD if trace.diverged else costs[-1])


@dataclass
class TrialOutcome:
    label: str
    strategy: str
    multiplier: float
    trial: int
    seed: int
    panels: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    epochs: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def diverged(self):
        return bool(self.summary.get('diverged', False))


def run_trial(cfg, variant, trial):
    """One seeded trial of one strategy; returns sampled curves and records."""
    label, strategy, multiplier = variant
    seed = cfg.seed + trial
    outcome = TrialOutcome(label, strategy, multiplier, trial, seed)
    try:
        truth = cfg.system()
        if cfg.experiment == 'demand':
            trace = run_demand(truth, cfg.disturbance_matrix(), cfg.synthesis(), cfg.horizon, seed, c=cfg.c,
                               constrained=strategy == 'constrained', sched=cfg.epoch_schedule(),
                               warmup=cfg.warmup(), data_policy=cfg.data_policy(strategy))
        elif strategy == 'robust':
            policy = 'scaled' if cfg.experiment == 'error_scaling' else cfg.error_policy
            trace = run_robust_adaptive(truth, None, cfg.epoch_schedule(), cfg.synthesis(), cfg.horizon, seed,
                                        warmup=cfg.warmup(), error_policy=policy, multiplier=multiplier,
                                        data_policy=cfg.data_policy(strategy))
        else:
            trace = run_baseline(strategy, truth, cfg.warmup(), cfg.horizon, seed, sched=cfg.epoch_schedule(),
                                 ofu=cfg.ofu(), ts=cfg.ts(), lam=cfg.lam, multiplier=multiplier,
                                 data_policy=cfg.data_policy(strategy))
    except (LabError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as e:
        logger.error(f"Trial {trial} of {label} failed: {e}", exc_info=True)
        outcome.error = f"{type(e).__name__}: {e}"
        return outcome

    times = sample_times(cfg.horizon, cfg.sample_points)
    regret = _pad(regret_of(trace), cfg.horizon, OVERFLOW_GUARD if trace.diverged else np.nan)
    costs = cost_curve(trace)
    outcome.panels = {'regret': regret[times - 1], 'cost': costs[times - 1]}
    peaks = None
    if cfg.experiment == 'demand':
        peaks = _pad(trace.state_peaks(), cfg.horizon, OVERFLOW_GUARD)
        outcome.panels['state'] = peaks[times - 1]
    outcome.summary = {
        'J_star': trace.J_star,
        'epochs': len(trace.epochs),
        'steps': trace.steps,
        'diverged': trace.diverged,
        'final_regret': float(regret[-1]),
        'final_cost': float(costs[-1]),
        'max_state': float(np.max(peaks)) if peaks is not None else np.nan,
        'fallbacks': sum(e.status == 'fallback' for e in trace.epochs),
    }
    outcome.epochs = [{'label': label, 'trial': trial, **row} for row in trace.records()]
    return outcome


@dataclass(eq=False)
class AggregateCurve:
    """Median and 90th percentile across trials, one long table with a ``panel`` column."""

    table: pd.DataFrame
    panels: tuple = ('regret', 'cost')

    @classmethod
    def empty(cls, panels=('regret', 'cost')):
        return cls(pd.DataFrame(columns=['panel'] + PANEL_COLUMNS), tuple(panels))

    def panel(self, name):
        rows = self.table[self.table['panel'] == name]
        return rows[PANEL_COLUMNS].reset_index(drop=True)

    @property
    def strategies(self):
        return list(dict.fromkeys(self.table['strategy']))

    def final(self, name):
        """The last sampled row of each strategy in a panel."""
        rows = self.panel(name)
        return rows.groupby('strategy', sort=False).last()


def aggregate(outcomes, times):
    """Median and p90 per (panel, strategy, time) over completed trials, diverged ones included."""
    frames = []
    panels = []
    for outcome in outcomes:
        if outcome.error is not None:
            continue
        for panel, values in outcome.panels.items():
            if panel not in panels:
                panels.append(panel)
            frames.append(pd.DataFrame({
                'panel': panel,
                'strategy': outcome.label,
                'trial': outcome.trial,
                'time': times,
                'value': np.clip(values, -OVERFLOW_GUARD, OVERFLOW_GUARD),
            }))
    if not frames:
        return AggregateCurve.empty()
    samples = pd.concat(frames, ignore_index=True)
    tables = []
    for panel in panels:
        grouped = samples[samples['panel'] == panel].groupby(['strategy', 'time'], sort=False)['value']
        table = pd.DataFrame({'median': grouped.median(), 'p90': grouped.quantile(0.9)}).reset_index()
        table.insert(0, 'panel', panel)
        tables.append(table)
    table = pd.concat(tables, ignore_index=True)
    table['time'] = table['time'].astype(int)
    return AggregateCurve(table[['panel'] + PANEL_COLUMNS], tuple(panels))


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    curve: AggregateCurve
    trials: pd.DataFrame
    epochs: pd.DataFrame
    failures: list

    @property
    def diverged(self):
        flags = self.trials['diverged'].fillna(False).astype(bool)
        return self.trials.loc[flags, ['label', 'trial']].values.tolist()


def run_experiment(cfg):
    """Runs every (strategy, trial) pair, aggregates and returns the result; nothing is written."""
    variants = cfg.variants()
    tasks = [(variant, trial) for variant in variants for trial in range(cfg.trials)]
    logger.info(f"Running {cfg.experiment} on {cfg.preset}: {len(variants)} strategies x {cfg.trials} trials, "
                f"horizon {cfg.horizon}, {cfg.workers} workers")
    if cfg.workers > 1:
        outcomes = Parallel(n_jobs=cfg.workers)(delayed(run_trial)(cfg, variant, trial) for variant, trial in tasks)
    else:
        outcomes = [run_trial(cfg, variant, trial) for variant, trial in tasks]

    times = sample_times(cfg.horizon, cfg.sample_points)
    curve = aggregate(outcomes, times)
    trial_rows = [{'label': o.label, 'strategy': o.strategy, 'multiplier': o.multiplier, 'trial': o.trial,
                   'seed': o.seed, 'error': o.error or '', **o.summary} for o in outcomes]
    trials = pd.DataFrame(trial_rows)
    if 'diverged' not in trials:
        trials['diverged'] = False
    epochs = pd.DataFrame([row for o in outcomes for row in o.epochs])
    failures = [(o.label, o.trial, o.error or 'diverged') for o in outcomes if o.error is not None or o.diverged]
    for label, trial, reason in failures:
        logger.warning(f"{label} trial {trial}: {reason}")
    logger.info(f"Finished {len(outcomes)} trials, {len(failures)} failed or diverged")
    return ExperimentResult(cfg, curve, trials, epochs, failures)


def _versions():
    versions = {}
    for package in ('numpy', 'scipy', 'pandas', 'joblib', 'Django', 'chardet'):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return versions


def emit_plotdata(curve, path, config=None, trials=None, epochs=None):
    """Writes one CSV per panel (time, strategy, median, p90) and ``manifest.json``; returns the paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for panel in curve.panels:
        target = out / f"{panel}.csv"
        curve.panel(panel).to_csv(target, index=False, float_format=FLOAT_FORMAT, columns=PANEL_COLUMNS)
        written.append(target)
    if trials is not None:
        target = out / 'trials.csv'
        trials.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        written.append(target)
    if epochs is not None and not epochs.empty:
        target = out / 'epochs.csv'
        epochs.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        written.append(target)
    manifest = {
        'panels': list(curve.panels),
        'columns': PANEL_COLUMNS,
        'float_format': FLOAT_FORMAT,
        'versions': _versions(),
    }
    if config is not None:
        manifest.update(config=config.to_dict(), config_hash=config.digest(), seed=config.seed,
                        data_policies=dict(config.data_policies))
    target = out / 'manifest.json'
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list))
    written.append(target)
    logger.info(f"Wrote {len(written)} files to {out}")
    return written


def read_plotdata(path):
    """Parses the panels listed in ``manifest.json`` back into an AggregateCurve."""
    out = Path(path)
    manifest = json.loads((out / 'manifest.json').read_text())
    frames = []
    for panel in manifest['panels']:
        frame = pd.read_csv(out / f"{panel}.csv", float_precision='round_trip',
                            dtype={'strategy': str, 'median': float, 'p90': float})
        frame['time'] = frame['time'].astype(int)
        frame.insert(0, 'panel', panel)
        frames.append(frame)
    if not frames or all(f.empty for f in frames):
        return AggregateCurve.empty(manifest['panels'])
    return AggregateCurve(pd.concat(frames, ignore_index=True), tuple(manifest['panels']))


def write_experiment(result, path=None):
    path = path or result.config.output_dir
    return emit_plotdata(result.curve, path, result.config, result.trials, result.epochs)
