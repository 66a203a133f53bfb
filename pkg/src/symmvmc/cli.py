"""Experiment orchestration: config files, subcommands, run directories.

A run is described by one human-editable TOML document (JSON is accepted
as an alternative input); the resolved form is stored canonically as
config.json inside the run directory, so any run can be reproduced from
its artifacts alone.  Every subcommand is a deterministic function of
(config, seed, checkpoint bytes): a rerun writes byte-identical files.

Exit codes: 0 ok, 2 config error, 3 numerical divergence during training,
4 incompatible or unreadable checkpoint.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import oracle, stats, systems
from . import scan as scanlib
from .ansatz import initial_ansatz
from .groups import (LATTICE_DIM, GroupClosureError, Isometry, close_group,
                     default_lattice)
from .smoothing import KINDS as SMOOTHING_KINDS
from .smoothing import SmoothingSpec
from .symmetrize import SymmetrizedWavefunction
from .vmc import (TrainSettings, Hamiltonian, child_seed, evaluate_metrics,
                  load_checkpoint, sample_batch, train, var_pa_over_og)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4

METHODS = ("og", "da", "ga", "gas", "pa", "sc", "pc")
TRAINABLE = ("og", "da", "ga", "gas")
INFERENCE = ("og", "pa", "ga", "sc", "pc")
SYSTEMS = ("chain", "square", "free", "custom")


class ConfigError(ValueError):
    """Configuration problem; maps to exit code 2."""


class CheckpointError(ValueError):
    """Checkpoint unreadable or incompatible with the config; exit code 4."""


# --- config sections --------------------------------------------------------

class SystemConfig(NamedTuple):
    name: str = "chain"
    dimension: Optional[int] = None   # free and custom systems only
    sites: Optional[tuple] = None     # custom systems only
    depth: float = systems.DEFAULT_DEPTH
    sigma: float = systems.DEFAULT_SIGMA
    scale: float = systems.DEFAULT_SCALE
    lambda_int: float = 0.0
    n_up: int = 1
    n_down: int = 0


class GroupConfig(NamedTuple):
    name: str = "system"              # system | trivial | custom
    generators: Optional[tuple] = None
    lattice: Optional[str] = None
    max_order: int = 16


class AnsatzConfig(NamedTuple):
    cutoff: float = 2.0
    jastrow: bool = False
    seed: int = 0
    noise: float = 0.1


class MethodConfig(NamedTuple):
    name: str = "og"
    k: int = 1
    subset: Optional[tuple] = None    # element indices into the group order
    epsilon: float = 0.05
    smoothing: str = "spline2"


class SamplerConfig(NamedTuple):
    n_samples: int = 256
    chain_length: int = 10
    burn_in: int = 50
    step_size: float = 0.25


class TrainingConfig(NamedTuple):
    steps: int = 100
    learning_rate: float = 0.05
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    checkpoint_every: int = 0


class EvaluationConfig(NamedTuple):
    n_chains: int = 64
    chain_length: int = 50
    burn_in: int = 50
    thin: int = 1


class ScanConfig(NamedTuple):
    base_seeds: Optional[tuple] = None
    base_spins: Optional[tuple] = None
    resolution: int = 101


class StatsConfig(NamedTuple):
    replicates: int = 50
    bootstrap: int = 200
    epsilons: tuple = (0.1, 0.05, 0.01)
    grid_points: int = 10000
    scan_points: int = 1001


class ExperimentConfig(NamedTuple):
    system: SystemConfig = SystemConfig()
    group: GroupConfig = GroupConfig()
    ansatz: AnsatzConfig = AnsatzConfig()
    method: MethodConfig = MethodConfig()
    sampler: SamplerConfig = SamplerConfig()
    training: TrainingConfig = TrainingConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    scan: ScanConfig = ScanConfig()
    stats: StatsConfig = StatsConfig()
    seed: int = 0
    output: str = "runs/exp"


# --- value coercion ---------------------------------------------------------

def _as_bool(key, value):
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be a boolean")
    return value


def _as_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer")
    return value


def _as_float(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number")
    return float(value)


def _as_str(key, value):
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def _as_int_tuple(key, value):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key} must be a list of integers")
    return tuple(_as_int(f"{key}[{i}]", v) for i, v in enumerate(value))


def _as_float_tuple(key, value):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a nonempty list of numbers")
    return tuple(_as_float(f"{key}[{i}]", v) for i, v in enumerate(value))


def _as_rows(key, value):
    """Tuple of equal-length float rows (positions, matrix rows)."""
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a nonempty list of rows")
    rows = tuple(_as_float_tuple(f"{key}[{i}]", row)
                 for i, row in enumerate(value))
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{key} rows must all have the same length")
    return rows


def _as_generators(key, value):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a nonempty list of tables")
    out = []
    for i, entry in enumerate(value):
        where = f"{key}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where} must be a table")
        for k in entry:
            if k not in ("rotation", "translation"):
                raise ConfigError(f"unknown key {where}.{k}")
        if "rotation" not in entry or "translation" not in entry:
            raise ConfigError(
                f"{where} needs both rotation and translation")
        rotation = _as_rows(f"{where}.rotation", entry["rotation"])
        translation = _as_float_tuple(f"{where}.translation",
                                      entry["translation"])
        if len(rotation) != len(rotation[0]) \
                or len(translation) != len(rotation):
            raise ConfigError(
                f"{where} rotation must be square with a matching "
                "translation length")
        out.append({"rotation": rotation, "translation": translation})
    return tuple(out)


def _optional(conv):
    def wrapped(key, value):
        if value is None:
            return None
        return conv(key, value)
    return wrapped


# (converter, default) per key; section order fixes the emitted layout
_SCHEMA = {
    "system": {
        "name": (_as_str, "chain"),
        "dimension": (_optional(_as_int), None),
        "sites": (_optional(_as_rows), None),
        "depth": (_as_float, systems.DEFAULT_DEPTH),
        "sigma": (_as_float, systems.DEFAULT_SIGMA),
        "scale": (_as_float, systems.DEFAULT_SCALE),
        "lambda_int": (_as_float, 0.0),
        "n_up": (_as_int, 1),
        "n_down": (_as_int, 0),
    },
    "group": {
        "name": (_as_str, "system"),
        "generators": (_optional(_as_generators), None),
        "lattice": (_optional(_as_str), None),
        "max_order": (_as_int, 16),
    },
    "ansatz": {
        "cutoff": (_as_float, 2.0),
        "jastrow": (_as_bool, False),
        "seed": (_as_int, 0),
        "noise": (_as_float, 0.1),
    },
    "method": {
        "name": (_as_str, "og"),
        "k": (_as_int, 1),
        "subset": (_optional(_as_int_tuple), None),
        "epsilon": (_as_float, 0.05),
        "smoothing": (_as_str, "spline2"),
    },
    "sampler": {
        "n_samples": (_as_int, 256),
        "chain_length": (_as_int, 10),
        "burn_in": (_as_int, 50),
        "step_size": (_as_float, 0.25),
    },
    "training": {
        "steps": (_as_int, 100),
        "learning_rate": (_as_float, 0.05),
        "lr_decay": (_as_float, 1.0),
        "lr_decay_every": (_as_int, 0),
        "checkpoint_every": (_as_int, 0),
    },
    "evaluation": {
        "n_chains": (_as_int, 64),
        "chain_length": (_as_int, 50),
        "burn_in": (_as_int, 50),
        "thin": (_as_int, 1),
    },
    "scan": {
        "base_seeds": (_optional(_as_rows), None),
        "base_spins": (_optional(_as_int_tuple), None),
        "resolution": (_as_int, 101),
    },
    "stats": {
        "replicates": (_as_int, 50),
        "bootstrap": (_as_int, 200),
        "epsilons": (_as_float_tuple, (0.1, 0.05, 0.01)),
        "grid_points": (_as_int, 10000),
        "scan_points": (_as_int, 1001),
    },
    "seeds": {
        "master": (_as_int, 0),
    },
    "output": {
        "directory": (_as_str, "runs/exp"),
    },
}

_SECTION_TYPES = {
    "system": SystemConfig,
    "group": GroupConfig,
    "ansatz": AnsatzConfig,
    "method": MethodConfig,
    "sampler": SamplerConfig,
    "training": TrainingConfig,
    "evaluation": EvaluationConfig,
    "scan": ScanConfig,
    "stats": StatsConfig,
}


def _build_section(name, raw):
    spec = _SCHEMA[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be a table of settings")
    for key in raw:
        if key not in spec:
            raise ConfigError(f"unknown key {name}.{key}")
    return {key: conv(f"{name}.{key}", raw[key]) if key in raw else default
            for key, (conv, default) in spec.items()}


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table of sections")
    for key in data:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown section {key}")
    sections = {name: cls(**_build_section(name, data.get(name)))
                for name, cls in _SECTION_TYPES.items()}
    seeds = _build_section("seeds", data.get("seeds"))
    output = _build_section("output", data.get("output"))
    return ExperimentConfig(seed=seeds["master"],
                            output=output["directory"], **sections)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(config):
    doc = {name: _plain(getattr(config, name)._asdict())
           for name in _SECTION_TYPES}
    doc["seeds"] = {"master": config.seed}
    doc["output"] = {"directory": config.output}
    return doc


def emit_config(config):
    """Canonical JSON form; parse_config(emit_config(c)) == c."""
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2) + "\n"


def parse_config(text):
    """Parse a config document: JSON when it opens with a brace, else TOML."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML config: {exc}") from exc
    return config_from_dict(data)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# --- building the experiment ------------------------------------------------

class Experiment(NamedTuple):
    config: ExperimentConfig
    h: Hamiltonian
    group: object
    region: object    # None unless a built-in system provides one
    ansatz: object


def _system_dimension(sys_cfg):
    fixed = {"chain": 1, "square": 2}
    if sys_cfg.name in fixed:
        dim = fixed[sys_cfg.name]
        if sys_cfg.dimension not in (None, dim):
            raise ConfigError(
                f"system.dimension must be {dim} for {sys_cfg.name!r}")
        return dim
    if sys_cfg.dimension is not None:
        return sys_cfg.dimension
    if sys_cfg.name == "custom" and sys_cfg.sites is not None:
        return len(sys_cfg.sites[0])
    raise ConfigError(f"system.dimension is required for {sys_cfg.name!r}")


def _build_system(sys_cfg):
    """(hamiltonian, builtin group or None, fundamental region or None)."""
    if sys_cfg.name not in SYSTEMS:
        raise ConfigError(
            f"system.name must be one of {', '.join(SYSTEMS)}")
    if sys_cfg.n_up < 0 or sys_cfg.n_down < 0 or \
            sys_cfg.n_up + sys_cfg.n_down < 1:
        raise ConfigError("system.n_up/n_down must hold at least 1 electron")
    dim = _system_dimension(sys_cfg)
    try:
        if sys_cfg.name == "chain":
            return systems.chain_system(
                lambda_int=sys_cfg.lambda_int, depth=sys_cfg.depth,
                sigma=sys_cfg.sigma, scale=sys_cfg.scale)
        if sys_cfg.name == "square":
            return systems.square_system(
                lambda_int=sys_cfg.lambda_int, depth=sys_cfg.depth,
                sigma=sys_cfg.sigma, scale=sys_cfg.scale)
        if sys_cfg.name == "free":
            h = Hamiltonian(dim, np.zeros((0, dim)), 0.0, 1.0,
                            sys_cfg.scale, lambda_int=sys_cfg.lambda_int)
            return h, None, None
        if sys_cfg.sites is None:
            raise ConfigError("system.sites is required for 'custom'")
        h = Hamiltonian(dim, sys_cfg.sites, sys_cfg.depth, sys_cfg.sigma,
                        sys_cfg.scale, lambda_int=sys_cfg.lambda_int)
        return h, None, None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc


def _build_group(grp_cfg, dim, builtin):
    if grp_cfg.name == "system":
        if builtin is None:
            raise ConfigError(
                "group.name 'system' needs a chain or square system; "
                "give group.generators or use 'trivial'")
        return builtin
    lattice = grp_cfg.lattice if grp_cfg.lattice is not None \
        else default_lattice(dim)
    if lattice not in LATTICE_DIM:
        raise ConfigError(f"group.lattice {lattice!r} is not known")
    if LATTICE_DIM[lattice] != dim:
        raise ConfigError(
            f"group.lattice {lattice!r} is {LATTICE_DIM[lattice]}-"
            f"dimensional but the system is {dim}-dimensional")
    if grp_cfg.name == "trivial":
        return close_group([], max_order=1, lattice=lattice)
    if grp_cfg.name != "custom":
        raise ConfigError("group.name must be system, trivial or custom")
    if not grp_cfg.generators:
        raise ConfigError("group.generators is required for 'custom'")
    gens = [Isometry(g["rotation"], g["translation"])
            for g in grp_cfg.generators]
    if any(g.dim != dim for g in gens):
        raise ConfigError(
            f"group.generators must be {dim}-dimensional isometries")
    try:
        return close_group(gens, max_order=grp_cfg.max_order,
                           lattice=lattice)
    except (GroupClosureError, ValueError) as exc:
        raise ConfigError(f"group.generators: {exc}") from exc


def _build_ansatz(config, dim):
    a = config.ansatz
    s = config.system
    try:
        return initial_ansatz(dim, a.cutoff, s.n_up, s.n_down,
                              jastrow=a.jastrow, seed=a.seed, noise=a.noise)
    except ValueError as exc:
        raise ConfigError(f"ansatz.cutoff: {exc}") from exc


def _validate_method(config, group, region):
    m = config.method
    if m.name not in METHODS:
        raise ConfigError(
            f"method.name must be one of {', '.join(METHODS)}")
    if m.k < 1:
        raise ConfigError("method.k must be at least 1")
    if m.name in ("da", "ga") and config.sampler.n_samples % m.k != 0:
        raise ConfigError(
            f"sampler.n_samples = {config.sampler.n_samples} must be "
            f"divisible by method.k = {m.k} for {m.name}")
    if m.name == "gas" and m.k > len(group):
        raise ConfigError(
            f"method.k = {m.k} exceeds the group order {len(group)}")
    if m.subset is not None:
        if not m.subset:
            raise ConfigError("method.subset must be nonempty when given")
        for i in m.subset:
            if not 0 <= i < len(group):
                raise ConfigError(
                    f"method.subset element {i} is out of range for a "
                    f"group of order {len(group)}")
    if m.name in ("sc", "pc"):
        if m.smoothing not in SMOOTHING_KINDS:
            raise ConfigError(
                f"method.smoothing must be one of "
                f"{', '.join(SMOOTHING_KINDS)}")
        if m.epsilon <= 0:
            raise ConfigError("method.epsilon must be positive")
        if region is None:
            raise ConfigError(
                f"method {m.name!r} needs a fundamental region; only the "
                "chain and square systems provide one")
        if m.epsilon >= region.inradius:
            raise ConfigError(
                f"method.epsilon = {m.epsilon} must stay below the "
                f"fundamental region inradius {region.inradius}")


def build_experiment(config):
    """Construct every object the subcommands share, validating as we go."""
    h, builtin, region = _build_system(config.system)
    group = _build_group(config.group, h.dim, builtin)
    ansatz = _build_ansatz(config, h.dim)
    _validate_method(config, group, region)
    return Experiment(config, h, group, region, ansatz)


def _subset_elements(config, group):
    if config.method.subset is None:
        return list(group)
    return [group[i] for i in config.method.subset]


def _wrap_for_inference(exp, base, method_name):
    """Base ansatz dressed the way the named method evaluates it."""
    if method_name == "og":
        return base
    if method_name in ("pa", "ga"):
        return SymmetrizedWavefunction(
            base, "ga", subset=_subset_elements(exp.config, exp.group))
    if method_name in ("sc", "pc"):
        m = exp.config.method
        spec = SmoothingSpec.create(m.smoothing, m.epsilon)
        return SymmetrizedWavefunction(base, "sc", group=exp.group,
                                       region=exp.region, spec=spec)
    raise ConfigError(
        f"method {method_name!r} is a training-time estimator; evaluate "
        f"with one of {', '.join(INFERENCE)}")


# --- file plumbing ----------------------------------------------------------

def _write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="ascii")


def _say(quiet, message):
    if not quiet:
        print(message)


def _check_compatible(exp, loaded, meta):
    s = exp.config.system
    expected = {
        "dim": (meta["dim"], exp.h.dim),
        "n_up": (loaded.n_up, s.n_up),
        "n_down": (loaded.n_down, s.n_down),
        "jastrow": (loaded.jastrow, exp.config.ansatz.jastrow),
        "n_params": (loaded.n_params, exp.ansatz.n_params),
    }
    for field, (got, want) in expected.items():
        if got != want:
            raise CheckpointError(
                f"checkpoint {field} = {got} but the config wants {want}")


def _load_checkpoint_for(exp, path):
    try:
        loaded, meta = load_checkpoint(path)
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") \
            from exc
    _check_compatible(exp, loaded, meta)
    return loaded, meta


# --- subcommands ------------------------------------------------------------

def run_oracle(exp, run_dir, quiet):
    if exp.h.interacting:
        raise ConfigError("oracle requires non-interacting (lambda_int = 0)")
    s = exp.config.system
    n_occupied = max(s.n_up, s.n_down)
    try:
        spectrum = oracle.diagonalize(exp.h, exp.config.ansatz.cutoff,
                                      n_occupied=n_occupied)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    energy = oracle.ground_state_energy(spectrum, s.n_up, s.n_down)
    report = {
        "cutoff": float(exp.config.ansatz.cutoff),
        "n_basis": len(spectrum.basis),
        "eigenvalues": np.asarray(spectrum.eigenvalues),
        "ground_state_energy": energy,
        "degenerate_filling": oracle.degenerate_filling(spectrum,
                                                        n_occupied),
        "max_residual": spectrum.max_residual(),
        "n_up": s.n_up,
        "n_down": s.n_down,
    }
    _write_text(run_dir / "reports" / "spectrum.json",
                stats.report_json(report))
    _say(quiet, f"ground state energy {energy!r} "
                f"({len(spectrum.basis)} basis functions)")
    return EXIT_OK


def run_train(exp, run_dir, quiet):
    config = exp.config
    name = config.method.name
    if name not in TRAINABLE:
        raise ConfigError(
            f"method {name!r} is inference-only; train with one of "
            f"{', '.join(TRAINABLE)}")
    group = exp.group
    if name == "ga":
        # a trained GA averages over the configured subset, default full
        group = _subset_elements(config, exp.group)
    t = config.training
    settings = TrainSettings(
        method=name, steps=t.steps, n_samples=config.sampler.n_samples,
        k=config.method.k, chain_length=config.sampler.chain_length,
        burn_in=config.sampler.burn_in, step_size=config.sampler.step_size,
        learning_rate=t.learning_rate, lr_decay=t.lr_decay,
        lr_decay_every=t.lr_decay_every, seed=config.seed,
        checkpoint_every=t.checkpoint_every)
    result = train(exp.h, exp.ansatz, settings, group=group,
                   trace_path=run_dir / "metrics.csv",
                   checkpoint_dir=run_dir / "checkpoints")
    if result.diverged:
        print(f"training diverged at step {len(result.trace) - 1}; "
              f"partial artifacts kept in {run_dir}", file=sys.stderr)
        return EXIT_DIVERGED
    if result.trace:
        _say(quiet, f"trained {len(result.trace)} steps; final energy "
                    f"{result.trace[-1].energy!r}")
    else:
        _say(quiet, f"wrote initial checkpoint to {run_dir}")
    return EXIT_OK


def run_evaluate(exp, run_dir, checkpoint, method_name, quiet):
    if checkpoint is None:
        raise ConfigError("evaluate needs --checkpoint")
    if method_name not in INFERENCE:
        raise ConfigError(
            f"method {method_name!r} is a training-time estimator; "
            f"evaluate with one of {', '.join(INFERENCE)}")
    config = exp.config
    loaded, meta = _load_checkpoint_for(exp, checkpoint)
    psi = _wrap_for_inference(exp, loaded, method_name)
    ev = config.evaluation
    batch = sample_batch(psi, ev.n_chains, ev.chain_length, ev.burn_in,
                         config.sampler.step_size,
                         child_seed(config.seed, "evaluate"), thin=ev.thin)
    metrics = evaluate_metrics(exp.h, psi, batch)
    report = {
        "method": method_name,
        "checkpoint_step": int(meta["step"]),
        "energy": metrics.energy,
        "stderr": metrics.stderr,
        "var_elocal": metrics.variance,
        "acceptance": metrics.acceptance,
        "n_samples": metrics.n_samples,
        "node_drops": metrics.node_drops,
        "seed": config.seed,
    }
    if method_name in ("pa", "ga") or config.method.subset is not None:
        base_batch = sample_batch(
            loaded, ev.n_chains, ev.chain_length, ev.burn_in,
            config.sampler.step_size,
            child_seed(config.seed, "evaluate-base"), thin=ev.thin)
        value, skipped = var_pa_over_og(
            loaded, _subset_elements(config, exp.group), base_batch,
            return_details=True)
        report["var_pa_over_og"] = value
        report["var_pa_skipped"] = skipped
    _write_text(run_dir / "reports" / "evaluate.json",
                stats.report_json(report))
    _say(quiet, f"energy {metrics.energy!r} +- {metrics.stderr!r} "
                f"(var_elocal {metrics.variance!r})")
    return EXIT_OK


def run_scan(exp, run_dir, checkpoint, method_name, quiet):
    config = exp.config
    base_ansatz = exp.ansatz
    if checkpoint is not None:
        base_ansatz, _ = _load_checkpoint_for(exp, checkpoint)
    psi = _wrap_for_inference(exp, base_ansatz, method_name)
    sc = config.scan
    seeds = sc.base_seeds if sc.base_seeds is not None \
        else ((0.0,) * exp.h.dim,)
    try:
        base = scanlib.symmetric_configuration(exp.group, seeds,
                                               spins=sc.base_spins)
    except ValueError as exc:
        raise ConfigError(f"scan.base_seeds: {exc}") from exc
    s = config.system
    n_up = int(np.count_nonzero(base.spins == 1))
    n_down = len(base.spins) - n_up
    if (n_up, n_down) != (s.n_up, s.n_down):
        raise ConfigError(
            f"scan.base_seeds orbit holds {n_up} up / {n_down} down "
            f"electrons but the system wants {s.n_up} up / {s.n_down} down")
    try:
        grid = scanlib.scan(psi, exp.group, base,
                            resolution=sc.resolution)
        report = scanlib.scan_report(grid)
    except ValueError as exc:
        raise ConfigError(f"scan: {exc}") from exc
    _write_text(run_dir / "scans" / "scan.csv", scanlib.scan_csv(grid))
    _write_text(run_dir / "reports" / "scan.json",
                stats.report_json(report))
    _say(quiet, f"max symmetry error {report['max_error']!r} over "
                f"{report['group_order']} relations")
    return EXIT_OK


def run_gradstats(exp, run_dir, method_name, quiet):
    if method_name not in TRAINABLE:
        raise ConfigError(
            f"gradstats covers the training estimators "
            f"{', '.join(TRAINABLE)}, not {method_name!r}")
    config = exp.config
    group = exp.group
    if method_name == "ga":
        group = _subset_elements(config, exp.group)
    fixture = stats.UpdateFixture(
        exp.h, exp.ansatz, group, config.sampler.n_samples,
        config.method.k, config.sampler.chain_length,
        burn_in=config.sampler.burn_in,
        step_size=config.sampler.step_size)
    try:
        result = stats.update_distribution(
            method_name, fixture, config.stats.replicates,
            child_seed(config.seed, "gradstats"),
            bootstrap=config.stats.bootstrap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = dict(result._asdict())
    report["n_samples"] = config.sampler.n_samples
    report["k"] = config.method.k
    report["seed"] = config.seed
    _write_text(run_dir / "reports" / "gradstats.json",
                stats.report_json(report))
    _say(quiet, f"{method_name} update covariance norm "
                f"{float(result.normalized_norm)!r} "
                f"(+- {float(result.norm_sigma)!r} bootstrap)")
    return EXIT_OK


def run_probe_smoothing(exp, run_dir, quiet):
    config = exp.config
    kind = config.method.smoothing
    if kind not in SMOOTHING_KINDS:
        raise ConfigError(
            f"method.smoothing must be one of {', '.join(SMOOTHING_KINDS)}")
    for eps in config.stats.epsilons:
        if eps <= 0:
            raise ConfigError("stats.epsilons must all be positive")
    rows = stats.blowup_probe(config.stats.epsilons, kind,
                              grid_points=config.stats.grid_points,
                              scan_points=config.stats.scan_points)
    _write_text(run_dir / "scans" / "probe_smoothing.csv",
                stats.blowup_csv(rows))
    _say(quiet, f"probed {len(rows)} epsilon values ({kind})")
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def _make_parser():
    parser = argparse.ArgumentParser(
        prog="symmvmc",
        description="Symmetrization strategies on periodic toy fermions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("oracle", "train", "evaluate", "scan", "gradstats",
                 "probe-smoothing"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML or JSON file")
        p.add_argument("--checkpoint", help="step_<n>.bin or .json path")
        p.add_argument("--out", help="run directory override")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--method", help="method name override")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    args = _make_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config._replace(seed=args.seed)
        if args.out is not None:
            config = config._replace(output=args.out)
        if args.method is not None:
            config = config._replace(
                method=config.method._replace(name=args.method))
        exp = build_experiment(config)
        run_dir = Path(config.output)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_text(run_dir / "config.json", emit_config(config))
        method = config.method.name
        if args.command == "oracle":
            return run_oracle(exp, run_dir, args.quiet)
        if args.command == "train":
            return run_train(exp, run_dir, args.quiet)
        if args.command == "evaluate":
            return run_evaluate(exp, run_dir, args.checkpoint, method,
                                args.quiet)
        if args.command == "scan":
            return run_scan(exp, run_dir, args.checkpoint, method,
                            args.quiet)
        if args.command == "gradstats":
            return run_gradstats(exp, run_dir, method, args.quiet)
        return run_probe_smoothing(exp, run_dir, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
