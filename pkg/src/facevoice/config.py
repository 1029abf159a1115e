"""Flat, namespaced ``key=value`` run configuration.

One pair per line, ``#`` starts a comment.  Every key belongs to a
namespace (``synth.``, ``stage1.``, ``stage2.``, ``dcts.``, ``gradcheck.``,
``mibench.``); unknown keys are rejected rather than ignored.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from ._validation import ValidationError
from .adapter.training import Stage1Config
from .dcts import DctsConfig
from .surrogate import Stage2Config
from .synthdata import SynthConfig


@dataclass(frozen=True)
class GradcheckConfig:
    batch_size: int = 8
    mode: str = "preactivation"
    stage1_seed: int = 7
    stage2_seed: int = 11

    def __post_init__(self):
        if not 1 <= self.batch_size <= 16:
            raise ValidationError("gradcheck.batch_size must be in [1, 16]")
        if self.mode not in ("full", "preactivation"):
            raise ValidationError("gradcheck.mode must be 'full' or 'preactivation'")


@dataclass(frozen=True)
class MiBenchConfig:
    n_tuples: int = 2000
    n_eval: int = 20000
    rhos: str = "0,0.3,0.5,0.7,0.9"
    estimators: str = "kde,gmm"
    seed: int = 0

    def __post_init__(self):
        if self.n_tuples < 30:
            raise ValidationError("mibench.n_tuples must be at least 30")
        for rho in self.rho_values:
            if not -1 < rho < 1:
                raise ValidationError(f"mibench.rhos: correlation {rho} outside (-1, 1)")
        for est in self.estimator_names:
            if est not in ("kde", "gmm"):
                raise ValidationError(f"mibench.estimators: unknown estimator {est!r}")

    @property
    def rho_values(self):
        try:
            return tuple(float(r) for r in self.rhos.split(",") if r.strip())
        except ValueError:
            raise ValidationError(f"mibench.rhos is not a comma-separated list of numbers: {self.rhos!r}") from None

    @property
    def estimator_names(self):
        return tuple(e.strip() for e in self.estimators.split(",") if e.strip())


SECTIONS = {
    "synth": SynthConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "dcts": DctsConfig,
    "gradcheck": GradcheckConfig,
    "mibench": MiBenchConfig,
}


def _coerce(raw, typ, key):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "1")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(f"config key {key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def parse_pairs(text, source="config"):
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValidationError(f"{source} line {n}: expected key=value")
        pairs[key] = value
    return pairs


class RunConfig:
    """Resolved configuration: defaults, then the config file, then overrides."""

    def __init__(self, pairs=None):
        self.values = {}
        for section, cls in SECTIONS.items():
            for f in fields(cls):
                self.values[f"{section}.{f.name}"] = getattr(cls(), f.name)
        for key, raw in (pairs or {}).items():
            self.set(key, raw)

    def set(self, key, raw):
        if key not in self.values:
            section = key.partition(".")[0]
            if section not in SECTIONS:
                raise ValidationError(f"unknown config key {key!r} (namespaces: {', '.join(SECTIONS)})")
            raise ValidationError(f"unknown config key {key!r}")
        section, _, name = key.partition(".")
        typ = {f.name: f.type for f in fields(SECTIONS[section])}[name]
        self.values[key] = _coerce(raw, typ, key) if isinstance(raw, str) else raw

    @classmethod
    def load(cls, path=None, overrides=()):
        pairs = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ValidationError(f"config file not found: {path}")
            pairs.update(parse_pairs(path.read_text(), str(path)))
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ValidationError(f"--set expects key=value, got {item!r}")
            pairs[key.strip()] = value.strip()
        return cls(pairs)

    def section(self, name):
        cls = SECTIONS[name]
        prefix = name + "."
        return cls(**{k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)})

    def render(self):
        return "".join(f"{k}={v}\n" for k, v in sorted(self.values.items()))
