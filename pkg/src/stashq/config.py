"""Declarative run configuration for the command-line driver.

Config files are flat INI text (key = value under [section] headers).
Published schema; unknown sections or keys are rejected so typos fail
loudly before any work starts.

    [run]        method, seed, epochs, out
    [model]      n_layers, d_model, n_heads, d_ff, vocab, seq_len
    [task]       variant, n_samples
    [train]      batch_size, lr_base, warmup
    [precision]  setup            (four widths, e.g. 16,4,4,16)
    [ladder]     family, rungs, patience, min_delta
    [costmodel]  table            (path to a unit-cost INI)
    [traffic]    include          (tensor classes, comma separated)
    [roofline]   peak_ops_per_sec, bandwidth_bytes_per_sec
    [estimate]   methods, target
    [sweep]      method, setups   (semicolon-separated 4-tuples)

Methods: floating-point, fixed, bfp, stashing-fixed, stashing-bfp, dsq.
Command-line flags override file values; method defaults fill the rest.
dsq takes a rung ladder instead of a single setup, never both.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .costmodel import (
    DEFAULT_SCHEDULE_TARGET,
    TENSOR_CLASSES,
    TrafficProfile,
    UnitCostTable,
    default_traffic_profile,
    load_unit_cost_table,
)
from .qtraining import ModelSpec, PrecisionConfig
from .scheduler import ScheduleLadder, default_ladder, validate_ladder

METHODS = ("floating-point", "fixed", "bfp", "stashing-fixed", "stashing-bfp", "dsq")
STATIC_METHODS = METHODS[:5]
OUT_DIR_ENV = "STASHQ_OUT_DIR"

_METHOD_FAMILY = {
    "floating-point": "ref",
    "fixed": "fixed",
    "stashing-fixed": "fixed",
    "bfp": "bfp",
    "stashing-bfp": "bfp",
    "dsq": "bfp",
}

# methods with a canonical width tuple; plain fixed/bfp must state theirs
_METHOD_DEFAULT_SETUP = {
    "floating-point": (32, 32, 32, 32),
    "stashing-fixed": (16, 4, 4, 16),
    "stashing-bfp": (16, 4, 4, 16),
}

_SCHEMA = {
    "run": ("method", "seed", "epochs", "out"),
    "model": ("n_layers", "d_model", "n_heads", "d_ff", "vocab", "seq_len"),
    "task": ("variant", "n_samples"),
    "train": ("batch_size", "lr_base", "warmup"),
    "precision": ("setup",),
    "ladder": ("family", "rungs", "patience", "min_delta"),
    "costmodel": ("table",),
    "traffic": ("include",),
    "roofline": ("peak_ops_per_sec", "bandwidth_bytes_per_sec"),
    "estimate": ("methods", "target"),
    "sweep": ("method", "setups"),
}


class ConfigError(ValueError):
    """Any problem that should stop a command before it does work."""


def parse_setup(text: str) -> tuple[int, int, int, int]:
    """Four comma-separated widths; brackets and spaces are tolerated."""
    cleaned = text.strip().strip("[]")
    parts = [p.strip() for p in cleaned.split(",") if p.strip()]
    if len(parts) != 4:
        raise ConfigError(f"a precision setup needs exactly four widths: {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"non-integer width in setup {text!r}") from exc


def parse_setup_grid(text: str) -> list[tuple[int, int, int, int]]:
    chunks = [c for c in (piece.strip() for piece in text.split(";")) if c]
    return [parse_setup(chunk) for chunk in chunks]


def method_family(method: str) -> str:
    try:
        return _METHOD_FAMILY[method]
    except KeyError:
        raise ConfigError(
            f"unknown method {method!r}; expected one of {', '.join(METHODS)}"
        ) from None


def build_precision(method: str, setup: tuple[int, int, int, int] | None) -> PrecisionConfig:
    """Static PrecisionConfig for one method row."""
    family = method_family(method)
    if method == "dsq":
        raise ConfigError("dsq is schedule-driven; it has no single setup")
    if setup is None:
        setup = _METHOD_DEFAULT_SETUP.get(method)
    if setup is None:
        raise ConfigError(f"method {method!r} needs --setup q0,q1,q2,q3")
    if family == "ref":
        if tuple(setup) != (32, 32, 32, 32):
            raise ConfigError("floating-point runs only at [32, 32, 32, 32]")
        return PrecisionConfig.reference()
    try:
        return PrecisionConfig.from_bits(family, setup)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_ladder_file(path: str) -> ScheduleLadder:
    """Read a rung ladder from an INI file's [ladder] section."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"ladder file not found: {path}")
    if not parser.has_section("ladder"):
        raise ConfigError(f"ladder file {path} has no [ladder] section")
    section = parser["ladder"]
    return _ladder_from_section(section)


def _ladder_from_section(section) -> ScheduleLadder:
    family = section.get("family", "bfp").strip()
    rungs_text = section.get("rungs", "")
    try:
        if rungs_text.strip():
            rungs = parse_setup_grid(rungs_text)
            ladder = ScheduleLadder(
                configs=tuple(PrecisionConfig.from_bits(family, r) for r in rungs),
                patience=section.getint("patience", fallback=2),
                min_delta=section.getfloat("min_delta", fallback=0.0),
            )
        else:
            ladder = default_ladder(family)
            ladder = ScheduleLadder(
                configs=ladder.configs,
                patience=section.getint("patience", fallback=ladder.patience),
                min_delta=section.getfloat("min_delta", fallback=ladder.min_delta),
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    violations = validate_ladder(ladder)
    if violations:
        raise ConfigError("invalid ladder: " + "; ".join(violations))
    return ladder


@dataclass
class RunConfig:
    """Everything a command needs, resolved and validated."""

    command: str
    method: str = "floating-point"
    method_given: bool = False
    seed: int = 0
    epochs: int = 8
    out: str = "runs"
    spec: ModelSpec = field(default_factory=ModelSpec.toy)
    variant: str = "copy"
    n_samples: int = 256
    batch_size: int = 16
    lr_base: float = 0.05
    warmup: int = 30
    setup: tuple[int, int, int, int] | None = None
    ladder: ScheduleLadder | None = None
    table: UnitCostTable = field(default_factory=load_unit_cost_table)
    profile: TrafficProfile = field(default_factory=default_traffic_profile)
    peak_ops_per_sec: float = 1e12
    bandwidth_bytes_per_sec: float = 64e9
    estimate_methods: tuple[str, ...] = ()
    estimate_target: tuple[float, float] = DEFAULT_SCHEDULE_TARGET
    sweep_method: str = "fixed"
    sweep_setups: tuple[tuple[int, int, int, int], ...] = ()

    def precision(self) -> PrecisionConfig:
        return build_precision(self.method, self.setup)

    def schedule(self) -> ScheduleLadder:
        if self.ladder is not None:
            return self.ladder
        return default_ladder("bfp")


def _read_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    return parser


def _model_from_section(section) -> ModelSpec:
    try:
        return ModelSpec(
            n_layers=section.getint("n_layers"),
            d_model=section.getint("d_model"),
            n_heads=section.getint("n_heads"),
            d_ff=section.getint("d_ff"),
            vocab=section.getint("vocab"),
            seq_len=section.getint("seq_len"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [model] section: {exc}") from exc


def _profile_from_section(section) -> TrafficProfile:
    classes = tuple(c.strip() for c in section.get("include", "").split(",") if c.strip())
    bad = [c for c in classes if c not in TENSOR_CLASSES]
    if bad:
        raise ConfigError(f"unknown tensor classes in [traffic]: {', '.join(bad)}")
    return TrafficProfile(include=frozenset(classes))


def resolve(command: str, args) -> RunConfig:
    """Merge config file, flags, and defaults into a validated RunConfig.

    Precedence: command-line flag, then config file, then method default.
    """
    cfg = RunConfig(command=command)
    parser = None
    if getattr(args, "config", None):
        parser = _read_ini(args.config)

    if parser is not None:
        if parser.has_section("run"):
            run = parser["run"]
            if run.get("method"):
                cfg.method = run["method"].strip()
                cfg.method_given = True
            cfg.seed = run.getint("seed", fallback=cfg.seed)
            cfg.epochs = run.getint("epochs", fallback=cfg.epochs)
            cfg.out = run.get("out", cfg.out)
        if parser.has_section("model"):
            cfg.spec = _model_from_section(parser["model"])
        elif command == "estimate":
            cfg.spec = ModelSpec.base_6layer()
        if parser.has_section("task"):
            task = parser["task"]
            cfg.variant = task.get("variant", cfg.variant).strip()
            cfg.n_samples = task.getint("n_samples", fallback=cfg.n_samples)
        if parser.has_section("train"):
            train = parser["train"]
            cfg.batch_size = train.getint("batch_size", fallback=cfg.batch_size)
            cfg.lr_base = train.getfloat("lr_base", fallback=cfg.lr_base)
            cfg.warmup = train.getint("warmup", fallback=cfg.warmup)
        if parser.has_section("precision") and parser["precision"].get("setup"):
            cfg.setup = parse_setup(parser["precision"]["setup"])
        if parser.has_section("ladder"):
            cfg.ladder = _ladder_from_section(parser["ladder"])
        if parser.has_section("costmodel") and parser["costmodel"].get("table"):
            try:
                cfg.table = load_unit_cost_table(parser["costmodel"]["table"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if parser.has_section("traffic"):
            cfg.profile = _profile_from_section(parser["traffic"])
        if parser.has_section("roofline"):
            roof = parser["roofline"]
            cfg.peak_ops_per_sec = roof.getfloat("peak_ops_per_sec",
                                                 fallback=cfg.peak_ops_per_sec)
            cfg.bandwidth_bytes_per_sec = roof.getfloat(
                "bandwidth_bytes_per_sec", fallback=cfg.bandwidth_bytes_per_sec)
        if parser.has_section("estimate"):
            est = parser["estimate"]
            if est.get("methods"):
                cfg.estimate_methods = tuple(
                    m.strip() for m in est["methods"].split(",") if m.strip())
            if est.get("target"):
                parts = [p.strip() for p in est["target"].split(",")]
                if len(parts) != 2:
                    raise ConfigError("estimate target needs two ratios")
                cfg.estimate_target = (float(parts[0]), float(parts[1]))
        if parser.has_section("sweep"):
            sweep = parser["sweep"]
            cfg.sweep_method = sweep.get("method", cfg.sweep_method).strip()
            if sweep.get("setups") is not None:
                cfg.sweep_setups = tuple(parse_setup_grid(sweep["setups"]))
    elif command == "estimate":
        cfg.spec = ModelSpec.base_6layer()

    if getattr(args, "method", None):
        cfg.method = args.method
        cfg.method_given = True
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    elif os.environ.get(OUT_DIR_ENV):
        if parser is None or not (parser.has_section("run") and parser["run"].get("out")):
            cfg.out = os.environ[OUT_DIR_ENV]
    if getattr(args, "setup", None):
        cfg.setup = parse_setup(args.setup)
    if getattr(args, "ladder", None):
        cfg.ladder = load_ladder_file(args.ladder)

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.method not in METHODS:
        raise ConfigError(
            f"unknown method {cfg.method!r}; expected one of {', '.join(METHODS)}")
    if cfg.method == "dsq":
        if cfg.setup is not None:
            raise ConfigError("dsq takes a rung ladder, not a single setup")
        violations = validate_ladder(cfg.schedule())
        if violations:
            raise ConfigError("invalid ladder: " + "; ".join(violations))
    else:
        if cfg.ladder is not None:
            raise ConfigError(f"method {cfg.method!r} is static; drop the ladder")
        if cfg.command == "train" or (cfg.command == "estimate" and cfg.method_given):
            cfg.precision()  # raises ConfigError when the setup is missing/bad
    if cfg.command == "sweep":
        if cfg.sweep_method not in STATIC_METHODS:
            raise ConfigError(f"sweep method must be static, got {cfg.sweep_method!r}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.epochs < 0:
        raise ConfigError("epochs must be non-negative")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size must be positive")
    if cfg.n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    for name in cfg.estimate_methods:
        if name not in METHODS:
            raise ConfigError(f"unknown estimate method {name!r}")
