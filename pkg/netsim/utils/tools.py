import os

from ..experiments import ExperimentConfig
from ..graph import GraphSpec
from ..process import InitSpec, ProcessParams


class ConfigError(ValueError):
    """Bad configuration file, flag combination or environment value."""


def parse_floats(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


# config key -> (argparse attribute, parser)
CONFIG_KEYS = {
    "graph.kind":          ("kind", str),
    "graph.width":         ("width", int),
    "graph.height":        ("height", int),
    "graph.target_degree": ("degree", int),
    "graph.seed":          ("graph_seed", int),
    "process.kind":        ("process", str),
    "process.beta":        ("beta", float),
    "process.mu":          ("mu", float),
    "init.prevalence":     ("prevalence", float),
    "run.t_end":           ("t_end", float),
    "run.h":               ("h", parse_floats),
    "run.replications":    ("replications", int),
    "run.mode":            ("mode", str),
    "run.step_policy":     ("step_policy", str),
    "run.workers":         ("workers", int),
    "output.dir":          ("out_dir", str),
    "seed":                ("seed", int),
}

DEFAULTS = {
    "kind": "torus", "width": 30, "height": 30, "degree": 5, "graph_seed": None,
    "process": "SI", "beta": 1.0, "mu": 0.2, "prevalence": 0.1,
    "t_end": 1.0, "h": (0.01, 0.0215), "replications": 1500, "mode": "dts",
    "step_policy": "truncate", "workers": 1, "out_dir": "results", "seed": 0,
}

SEED_ENV = "NETSIM_SEED"


def load_config(path):
    """Parse a `key = value` file; `#` starts a comment, blank lines are skipped.

    Numbers are read with int()/float(), which ignore the locale. Unknown or
    repeated keys and malformed lines raise ConfigError naming the line.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError("Config file not found: %s" % path)
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("%s:%d: expected 'key = value', got %r" % (path, lineno, raw.strip()))
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError("%s:%d: unknown key %r" % (path, lineno, key))
            if key in values:
                raise ConfigError("%s:%d: key %r given twice" % (path, lineno, key))
            attr, parse = CONFIG_KEYS[key]
            try:
                values[attr] = parse(value)
            except ValueError:
                raise ConfigError("%s:%d: bad value %r for %s" % (path, lineno, value, key)) from None
    return values


def env_seed():
    text = os.environ.get(SEED_ENV)
    if text is None or not text.strip():
        return None
    try:
        return int(text)
    except ValueError:
        raise ConfigError("%s must be an integer, got %r" % (SEED_ENV, text)) from None


def init_args(args, config=None, make_dirs=True):
    # flag > config file > NETSIM_SEED (seed only) > default
    config = config or {}
    for attr, default in DEFAULTS.items():
        if getattr(args, attr, None) is not None:
            continue
        if attr in config:
            setattr(args, attr, config[attr])
        elif attr == "seed" and env_seed() is not None:
            args.seed = env_seed()
        else:
            setattr(args, attr, default)
    if args.graph_seed is None:
        args.graph_seed = args.seed
    if args.seed < 0 or args.graph_seed < 0:
        raise ConfigError("Seeds must be nonnegative")

    args.recordsSavePath   = os.path.join(args.out_dir, 'records.csv')
    args.summarySavePath   = os.path.join(args.out_dir, 'summary.csv')
    args.costSavePath      = os.path.join(args.out_dir, 'costs.csv')
    args.histogramSavePath = os.path.join(args.out_dir, 'histogram.csv')
    args.traceSavePath     = os.path.join(args.out_dir, 'error_trace.csv')
    args.sweepSavePath     = os.path.join(args.out_dir, 'sweep.csv')
    args.trajectorySavePath = os.path.join(args.out_dir, 'trajectory.csv')
    args.prevalenceSavePath = os.path.join(args.out_dir, 'prevalence.csv')
    args.statesSavePath     = os.path.join(args.out_dir, 'states.csv')
    if make_dirs:
        os.makedirs(args.out_dir, exist_ok=True)
    return args


def graph_spec(args):
    return GraphSpec(kind=args.kind, width=args.width, height=args.height,
                     target_degree=args.degree, seed=args.graph_seed)


def experiment_config(args):
    """ExperimentConfig from merged args; invalid combinations become ConfigError."""
    try:
        return ExperimentConfig(
            graph_spec=graph_spec(args),
            params=ProcessParams(args.process, args.beta, args.mu),
            init=InitSpec(args.prevalence),
            t_end=args.t_end,
            replications=args.replications,
            h_values=tuple(args.h),
            mode=args.mode,
            master_seed=args.seed,
            step_policy=args.step_policy,
            workers=args.workers,
            regenerate_graph=bool(getattr(args, "regenerate_graph", False)),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def write_frame(frame, path):
    frame.to_csv(path, index=False, float_format="%.9g")
    return path
