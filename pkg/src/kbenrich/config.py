"""INI configuration for the command line tools.

One file, sections ``[paths] [pipeline] [similarity] [gnn] [truth] [world]
[eval]``; every key is optional. Relative paths resolve against the config
file's directory. ``[pipeline] seed`` is the master seed and overrides the
per-component seeds.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .gnn import GnnConfig
from .protocol import ProtocolConfig, WorldConfig
from .similarity import SimilarityWeights
from .truth import TruthConfig

DESK_INIT_STD = 0.1
PATH_KEYS = ("kb", "claims", "priors", "world", "graph", "checkpoint", "output", "ranges")


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticKbConfig:
    n_classes: int = 5
    entities_per_class: int = 60
    properties_per_class: int = 30


@dataclass
class PipelineConfig:
    paths: dict[str, Path] = field(default_factory=dict)
    seed: int = 0
    m: int = 10
    k: int = 10
    weights: SimilarityWeights = field(default_factory=SimilarityWeights)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    synthetic: SyntheticKbConfig = field(default_factory=SyntheticKbConfig)
    classes: list[str] = field(default_factory=list)

    def path(self, name: str, must_exist: bool = True) -> Path:
        """Configured path ``name``; raises ConfigError when unset or missing."""
        p = self.paths.get(name)
        if p is None:
            raise ConfigError(f"[paths] {name} is not set")
        if must_exist and not p.exists():
            raise ConfigError(f"[paths] {name} = {p} does not exist")
        return p


def _coerce(cls, section: configparser.SectionProxy, skip: tuple[str, ...] = ()) -> dict:
    """Typed values for the dataclass fields of ``cls`` present in ``section``."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in types:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        t = str(types[key])
        try:
            if t.startswith("bool"):
                out[key] = section.getboolean(key)
            elif t.startswith("int"):
                out[key] = int(raw)
            elif t.startswith("float"):
                out[key] = float(raw)
            elif t.startswith("tuple"):
                out[key] = tuple(float(x) for x in raw.split(","))
            else:
                raise ConfigError(f"[{section.name}] {key} cannot be set here")
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    return out


def _build(cls, section, base=None, **extra):
    try:
        kwargs = _coerce(cls, section) if section is not None else {}
        if base is not None:
            return dataclasses.replace(base, **kwargs, **extra)
        return cls(**kwargs, **extra)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        name = section.name if section is not None else cls.__name__
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Parse ``path`` (or return defaults when None)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        base_dir = path.parent
    known = {"paths", "pipeline", "similarity", "gnn", "truth", "world", "eval", "synthetic"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    def sec(name):
        return cp[name] if cp.has_section(name) else None

    paths = {}
    if sec("paths") is not None:
        for key, raw in cp["paths"].items():
            if key not in PATH_KEYS:
                raise ConfigError(f"[paths] unknown key {key!r}")
            p = Path(raw).expanduser()
            paths[key] = p if p.is_absolute() else base_dir / p

    pipe = sec("pipeline")
    try:
        seed = pipe.getint("seed", 0) if pipe is not None else 0
        m = pipe.getint("m", 10) if pipe is not None else 10
        classes = [c.strip() for c in pipe.get("classes", "").split(",") if c.strip()] \
            if pipe is not None else []
        sim = sec("similarity")
        k = sim.getint("k", 10) if sim is not None else 10
        alphas = [sim.getfloat(a, d) if sim is not None else d
                  for a, d in (("alpha1", 0.3), ("alpha2", 0.3), ("alpha3", 0.4))]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if pipe is not None:
        extra = set(pipe) - {"seed", "m", "classes"}
        if extra:
            raise ConfigError(f"[pipeline] unknown key(s): {', '.join(sorted(extra))}")
    if m < 1:
        raise ConfigError("[pipeline] m must be >= 1")
    try:
        weights = SimilarityWeights(*alphas)
    except ValueError as exc:
        raise ConfigError(f"[similarity] {exc}") from None

    gnn = _build(GnnConfig, sec("gnn"), None, **({} if _has(sec("gnn"), "k") else {"k": k}))
    gnn = dataclasses.replace(gnn, seed=seed)
    if not _has(sec("gnn"), "init_std"):
        # desk-scale default; unit-variance weights saturate the scorer on small graphs
        gnn = dataclasses.replace(gnn, init_std=DESK_INIT_STD)
    truth = _build(TruthConfig, sec("truth"))
    world = _build(WorldConfig, sec("world"))
    eval_sec = sec("eval")
    if _has(eval_sec, "seed"):
        raise ConfigError("[eval] seed comes from [pipeline] seed")
    protocol = _build(ProtocolConfig, eval_sec, None, seed=seed, weights=weights,
                      gnn=gnn, truth=truth, world=world)
    synthetic = _build(SyntheticKbConfig, sec("synthetic"))
    return PipelineConfig(paths, seed, m, k, weights, gnn, truth, protocol, synthetic, classes)


def _has(section, key: str) -> bool:
    return section is not None and key in section


EXAMPLE = """\
# kbenrich configuration (INI). All keys optional.
[paths]
kb = kb.tsv
world = world
graph = graph.json
checkpoint = gnn.json
output = out

[pipeline]
seed = 0
m = 10
classes = class_0, class_1, class_2, class_3, class_4

[similarity]
alpha1 = 0.3
alpha2 = 0.3
alpha3 = 0.4
k = 10

[gnn]
d1 = 16
d2 = 16
epochs = 100
learning_rate = 0.01

[truth]
beta = 5, 5
alpha = 0.05
epsilon = 0.5

[world]
n_sources = 50
powerlaw_exponent = 2.0

[eval]
n_train = 40
n_val = 5
n_test = 15

[synthetic]
n_classes = 5
entities_per_class = 60
properties_per_class = 30
"""
