"""Run configuration: ``key = value`` lines, ``#`` comments, ``[section]`` headers.

Keys may be written bare or as ``section.key``; section names only group
keys, so ``[run]\\nkappa = 100`` and ``kappa = 100`` are the same.
"""

from dataclasses import dataclass, field, fields, replace

from .builtins import BUILTINS
from .dynamics import MONITORS
from .errors import ConfigError


@dataclass
class RunConfig:
    dim: int = 2
    nx: int = 48
    order: int = 4
    kappa: float = 100.0
    kappas: list = field(default_factory=list)
    lam: float = 1.0
    tmax: float = 0.1
    dt: float = None
    dt_policy: str = "cfl"
    n_out: int = 20
    R_max: int = 2
    N_order: int = 2
    source: str = "solenoidal-random"
    monitors: list = field(default_factory=lambda: ["energy"])
    out: str = "out"
    seed: int = 0
    compatible: bool = False
    amplitude: float = None
    b: float = None
    energy_orders: list = field(default_factory=lambda: [0, 1])

    def validate(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        for name in ("nx", "order", "n_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("kappa", "tmax"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if any(not k > 0 for k in self.kappas):
            raise ConfigError("every kappa must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.dt_policy not in ("cfl", "fixed"):
            raise ConfigError("dt_policy must be 'cfl' or 'fixed'")
        if self.dt_policy == "fixed" and not (self.dt and self.dt > 0):
            raise ConfigError("dt_policy = fixed needs a positive dt")
        if not 0 <= self.N_order <= 2:
            raise ConfigError("N_order must be 0, 1 or 2")
        if not 0 <= self.R_max <= 2:
            raise ConfigError("R_max must be 0, 1 or 2")
        if self.source not in BUILTINS and not self.source.endswith(".mhdl"):
            raise ConfigError(f"source must be a builtin ({', '.join(BUILTINS)}) or a .mhdl snapshot")
        bad = [m for m in self.monitors if m not in MONITORS]
        if bad:
            raise ConfigError(f"unknown monitors {bad}; choose from {', '.join(MONITORS)}")
        return self


_ALIASES = {"lambda": "lam", "resolution": "nx", "t_final": "tmax", "T": "tmax",
            "degree": "order", "monitor": "monitors", "initial_data": "source",
            "output": "out", "dimension": "dim"}


def _convert(name, text):
    kinds = {f.name: f for f in fields(RunConfig)}
    default = kinds[name].default
    if name in ("monitors",):
        return [s.strip() for s in text.replace(",", " ").split() if s.strip()]
    if name in ("kappas",):
        return [float(s) for s in text.replace(",", " ").split()]
    if name in ("energy_orders",):
        return [int(s) for s in text.replace(",", " ").split()]
    if name in ("dim", "nx", "order", "n_out", "R_max", "N_order", "seed"):
        return int(text)
    if name in ("kappa", "lam", "tmax", "dt", "amplitude", "b"):
        return float(text)
    if name == "compatible":
        low = text.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("1", "true", "yes", "on")
    return text if default is None or isinstance(default, str) else type(default)(text)


def parse_config(text, base=None):
    """Parse config text into a RunConfig; malformed input raises ConfigError."""
    cfg = base or RunConfig()
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if "." in key:
            key = key.split(".", 1)[1]
        key = _ALIASES.get(key, key)
        if key not in known:
            where = f" in [{section}]" if section else ""
            raise ConfigError(f"line {lineno}: unknown key {key!r}{where}")
        if val == "":
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        try:
            updates[key] = _convert(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return replace(cfg, **updates)


def load_config(path, base=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)
