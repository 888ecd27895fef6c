"""Run configuration: TOML file plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exact import as_fraction
from .harmonic import HarmonicStructure, preset_harmonic_structure
from .structure import PcfStructure, StructureError, from_config, preset

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_vector", "parse_levels", "parse_floats"]


class ConfigError(ValueError):
    pass


def parse_vector(text: str) -> list[Fraction]:
    try:
        return [as_fraction(x.strip()) for x in text.split(",") if x.strip()]
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad rational vector {text!r}: {exc}") from None


def parse_levels(text: str) -> list[int]:
    """``"4,6,8"`` or ``"3..6"`` (inclusive)."""
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad level list {text!r}") from None


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


@dataclass
class RunConfig:
    structure: dict = field(default_factory=lambda: {"preset": "sg2"})
    harmonic: dict | None = None
    basis: list[list[Fraction]] | None = None
    levels: list[int] = field(default_factory=lambda: [4, 6, 8])
    epsilons: list[float] = field(default_factory=lambda: [0.01])
    output: str = "out"
    vertex_cap: int = 2_000_000
    rtol: float = 1e-10
    carpet: dict = field(default_factory=lambda: {"preset": "carpet2d"})

    def validate(self) -> "RunConfig":
        if not self.levels or any(int(m) < 1 for m in self.levels):
            raise ConfigError("levels must be integers >= 1")
        if any(not 0 < e < 1 for e in self.epsilons):
            raise ConfigError("epsilons must lie in (0, 1)")
        if self.vertex_cap < 1:
            raise ConfigError("vertex_cap must be positive")
        return self

    def build_structure(self) -> PcfStructure:
        return from_config(self.structure)

    def build_harmonic(self, s: PcfStructure) -> HarmonicStructure:
        if self.harmonic is None:
            return preset_harmonic_structure(s)
        try:
            D = self.harmonic["D"]
            r = self.harmonic["r"]
        except KeyError as exc:
            raise ConfigError(f"harmonic: missing key {exc}") from None
        if isinstance(r, (str, int)):
            return HarmonicStructure.uniform(D, r, s.n_symbols)
        return HarmonicStructure(tuple(map(tuple, D)), tuple(r))

    def as_dict(self) -> dict:
        return {
            "structure": self.structure, "harmonic": self.harmonic, "basis": self.basis,
            "levels": self.levels, "epsilons": self.epsilons, "vertex_cap": self.vertex_cap,
            "rtol": self.rtol, "carpet": self.carpet,
        }


def load_config(path: str | Path | None) -> RunConfig:
    """Read a TOML run config; missing sections fall back to defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    known = {"structure", "harmonic", "basis", "levels", "epsilons", "output", "solver", "carpet"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
    if "structure" in data:
        cfg.structure = data["structure"]
    if "harmonic" in data:
        cfg.harmonic = data["harmonic"]
    if "basis" in data:
        try:
            cfg.basis = [[as_fraction(x) for x in vec] for vec in data["basis"]["vectors"]]
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"basis: {exc}") from None
    if "levels" in data:
        cfg.levels = [int(m) for m in data["levels"]]
    if "epsilons" in data:
        cfg.epsilons = [float(e) for e in data["epsilons"]]
    if "output" in data:
        cfg.output = str(data["output"])
    solver = data.get("solver", {})
    cfg.vertex_cap = int(solver.get("vertex_cap", cfg.vertex_cap))
    cfg.rtol = float(solver.get("rtol", cfg.rtol))
    if "carpet" in data:
        cfg.carpet = data["carpet"]
    # surface unknown presets early
    if "preset" in cfg.structure:
        try:
            preset(cfg.structure["preset"])
        except StructureError as exc:
            raise ConfigError(str(exc)) from None
    return cfg.validate()
