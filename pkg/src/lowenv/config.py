"""Flat ``key = value`` experiment configuration.

Blank lines and lines starting with ``#`` are ignored.  Lists are comma
separated; lists of tuples (ellipses, seed discs) separate the tuples with
``;``.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _tuples(text: str) -> tuple:
    return tuple(_floats(part) for part in text.split(";") if part.strip())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(_fmt(v) for v in value)
        return ",".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to synthesise data and run a reconstruction.

    See the README for the meaning of every key.
    """

    n: int = 63
    sigma: tuple = (1.0, 3.0, 15.0)
    sigma_mode: str = "laminate"
    # ground truth
    truth_amp: float = 0.08
    truth_ellipses: tuple = ((0.35, 0.65, 0.2, 0.1), (0.75, 0.35, 0.15, 0.25))
    truth_scale: float = 0.2
    # initial guess
    init: str = "seeded"
    init_offset: float = 0.05
    init_seeds: tuple = ((0.3, 0.5, 0.15), (0.7, 0.5, 0.15))
    init_scale: float = 1.0
    # data
    currents: tuple = tuple(range(1, 12))
    delta: float = 0.0
    seed: int = 0
    synth_factor: int = 1
    # optimisation
    alpha1: float = 0.2
    alpha2: float = 0.8
    alpha3: float = 1e5
    descent: str = "gradient"
    t_ls: float = 0.02
    t_max: float = 0.1
    growth: float = 1.5
    backtrack: float = 0.5
    max_backtracks: int = 8
    armijo: float = 1e-4
    max_iter: int = 200
    step_tol: float = 1e-5
    cfl: float = 0.5
    paper_norm: str = "full"
    solver: str = "direct"
    regularity_every: int = 10
    snapshot_every: int = 0
    threads: int = 1
    # advect / phases commands
    phi_file: str = ""
    velocity: tuple = (0.0, 0.0)
    t0: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        s = self.sigma
        if len(s) < 2 or any(not (v > 0) for v in s):
            raise ConfigError("sigma values must be positive")
        if len(set(s)) != len(s):
            raise ConfigError("sigma values must be pairwise distinct")
        if self.sigma_mode not in ("laminate", "fraction", "centroid"):
            raise ConfigError(f"sigma_mode must be laminate, fraction or centroid, got {self.sigma_mode!r}")
        if self.init not in ("seeded", "flat"):
            raise ConfigError(f"init must be seeded or flat, got {self.init!r}")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.synth_factor not in (1, 2):
            raise ConfigError("synth_factor must be 1 or 2")
        if not self.currents or any(c < 1 or c > 11 for c in self.currents):
            raise ConfigError("currents must be indices in 1..11")
        if self.paper_norm not in ("full", "first_current"):
            raise ConfigError("paper_norm must be full or first_current")
        if self.descent not in ("gradient", "ncg"):
            raise ConfigError("descent must be gradient or ncg")
        if self.solver not in ("direct", "cg"):
            raise ConfigError("solver must be direct or cg")
        if not (0 < self.cfl <= 1):
            raise ConfigError("cfl must lie in (0, 1]")
        if not (0 < self.backtrack < 1):
            raise ConfigError("backtrack factor must lie in (0, 1)")
        if self.t_ls <= 0 or self.step_tol <= 0 or self.t_max < self.t_ls:
            raise ConfigError("need 0 < t_ls <= t_max and step_tol > 0")
        if self.max_iter < 0 or self.max_backtracks < 0 or self.threads < 1:
            raise ConfigError("max_iter, max_backtracks must be >= 0 and threads >= 1")
        for e in self.truth_ellipses:
            if len(e) != 4 or e[2] <= 0 or e[3] <= 0:
                raise ConfigError("each ellipse needs cx,cy,rx,ry with positive radii")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        for d in self.init_seeds:
            if len(d) != 3 or d[2] <= 0:
                raise ConfigError("each seed disc needs cx,cy,r with positive radius")
        if len(self.velocity) != 2:
            raise ConfigError("velocity needs two components")

    # -- (de)serialisation ---------------------------------------------------

    @classmethod
    def _parser(cls, name):
        default = {f.name: f.default for f in dataclasses.fields(cls)}[name]
        if name in ("truth_ellipses", "init_seeds"):
            return _tuples
        if name == "currents":
            return _ints
        if isinstance(default, tuple):
            return _floats
        if isinstance(default, bool):
            return _bool
        return type(default)

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, items: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        known = set(cls.keys())
        kwargs = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                kwargs[key] = cls._parser(key)(raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
        if base is not None:
            return dataclasses.replace(base, **kwargs)
        return cls(**kwargs)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        items = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in items:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            items[key] = value
        return cls.from_mapping(items)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def echo(self) -> str:
        """Fully resolved configuration in the input format."""
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in self.keys())

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)
