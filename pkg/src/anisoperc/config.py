"""Model parameters and the key-value config file format.

A config file is either JSON or plain ``key = value`` lines (``#`` starts a
comment, an optional ``[section]`` header is ignored)::

    n = 64
    alpha = 0.2
    b = 0.4
    kappa = 2.5
    seed = 12345
    max_sites = 10000000
    max_generation = 1000000
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

MAX_SITES = 10**7
MAX_GENERATION = 10**6


@dataclass(frozen=True)
class LatticeConfig:
    """Parameters of the anisotropic lattice.

    ``N`` is the horizontal range, horizontal edges open with probability
    ``1/(2N)`` and vertical edges with ``min(1, kappa * N**-b)``.  The two
    ``*_override`` fields pin an edge probability directly and exist for
    degenerate test configurations.
    """

    N: int
    alpha: float = 0.2
    b: float = 0.4
    kappa: float = 0.0
    seed: int = 0
    p_h_override: Optional[float] = None
    p_v_override: Optional[float] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.b <= 0.0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        for name in ("p_h_override", "p_v_override"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def p_h(self) -> float:
        if self.p_h_override is not None:
            return float(self.p_h_override)
        return 1.0 / (2 * self.N)

    @property
    def p_v(self) -> float:
        if self.p_v_override is not None:
            return float(self.p_v_override)
        return min(1.0, self.kappa * float(self.N) ** (-self.b))

    @property
    def space_scale(self) -> float:
        """Unscaled sites per unit of rescaled space, N^(1+alpha)."""
        return float(self.N) ** (1.0 + self.alpha)

    @property
    def time_scale(self) -> float:
        """Steps per unit of rescaled time, N^(2 alpha)."""
        return float(self.N) ** (2.0 * self.alpha)

    def with_(self, **changes) -> "LatticeConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Caps:
    """Exploration limits; ``layer_window`` is an inclusive ``(lo, hi)`` pair."""

    max_sites: int = MAX_SITES
    max_generation: int = MAX_GENERATION
    layer_window: Optional[tuple] = None

    def __post_init__(self):
        if self.max_sites < 1 or self.max_generation < 1:
            raise ValueError("caps must be positive")


@dataclass(frozen=True)
class RunConfig:
    lattice: LatticeConfig
    caps: Caps = field(default_factory=Caps)
    extra: dict = field(default_factory=dict)


_INT_KEYS = {"n", "seed", "max_sites", "max_generation"}
_FLOAT_KEYS = {"alpha", "b", "kappa", "p_h", "p_v"}


def _coerce(key: str, raw):
    if isinstance(raw, str):
        raw = raw.strip()
        if key in _INT_KEYS:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if key in _FLOAT_KEYS:
            if "/" in raw:
                num, den = raw.split("/")
                return float(num) / float(den)
            return float(raw)
        if key == "layer_window":
            lo, hi = raw.replace(",", " ").split()
            return (int(lo), int(hi))
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse JSON or ``key = value`` text into a :class:`RunConfig`."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        items = json.loads(text)
    else:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str.lower
        body = text if stripped.startswith("[") else "[config]\n" + text
        parser.read_string(body)
        items = {}
        for section in parser.sections():
            items.update(parser[section])
    items = {k.lower(): _coerce(k.lower(), v) for k, v in items.items()}
    if "n" not in items:
        raise ValueError("config is missing the required key 'n'")
    lattice = LatticeConfig(
        N=int(items.pop("n")),
        alpha=float(items.pop("alpha", 0.2)),
        b=float(items.pop("b", 0.4)),
        kappa=float(items.pop("kappa", 0.0)),
        seed=int(items.pop("seed", 0)),
        p_h_override=items.pop("p_h", None),
        p_v_override=items.pop("p_v", None),
    )
    window = items.pop("layer_window", None)
    caps = Caps(
        max_sites=int(items.pop("max_sites", MAX_SITES)),
        max_generation=int(items.pop("max_generation", MAX_GENERATION)),
        layer_window=tuple(window) if window is not None else None,
    )
    return RunConfig(lattice=lattice, caps=caps, extra=items)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(run: RunConfig) -> str:
    """Render as ``key = value`` text that :func:`parse_config` reads back."""
    lat = asdict(run.lattice)
    lines = [
        f"n = {lat['N']}",
        f"alpha = {lat['alpha']!r}",
        f"b = {lat['b']!r}",
        f"kappa = {lat['kappa']!r}",
        f"seed = {lat['seed']}",
    ]
    if lat["p_h_override"] is not None:
        lines.append(f"p_h = {lat['p_h_override']!r}")
    if lat["p_v_override"] is not None:
        lines.append(f"p_v = {lat['p_v_override']!r}")
    lines.append(f"max_sites = {run.caps.max_sites}")
    lines.append(f"max_generation = {run.caps.max_generation}")
    if run.caps.layer_window is not None:
        lo, hi = run.caps.layer_window
        lines.append(f"layer_window = {lo} {hi}")
    for k, v in run.extra.items():
        lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"
