"""Pipeline configuration and its JSON round trip."""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

from funcci.errors import ConfigError
from funcci.nulldist import DEFAULT_DRAWS, DEFAULT_SEED, MIN_DRAWS
from funcci.smoothing import DEFAULT_GRID_L


def default_grid() -> Tuple[float, ...]:
    """0.001, 0.002, ..., 0.009, 0.01, 0.02, ..., 0.09, 0.1."""
    return tuple(k / 1000 for k in range(1, 10)) + tuple(k / 100 for k in range(1, 10)) + (0.1,)


PVALUE_METHODS = ("mc", "satterthwaite")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that influences a test run besides the data.

    Attributes
    ----------
    balanced : bool or None
        Force the common-grid shortcut (True), force smoothing (False), or
        detect it from the data (None).
    grid_l : int
        Number of quadrature intervals on [0, 1] for smoothed curves (even).
    grid_T : tuple of float
        Candidates for the smoothing constant delta_n.
    grid_Z : tuple of float
        Candidates for epsilon_n.  When ``grid_Z_per_n`` is true each value is
        divided by the sample size before use.
    draws, seed : int
        Monte Carlo size and seed for the null distribution.
    eig_threshold : float
        Null eigenvalues below this fraction of the largest are discarded.
    pvalue_method : {'mc', 'satterthwaite'}
    """

    balanced: Optional[bool] = None
    grid_l: int = DEFAULT_GRID_L
    grid_T: Tuple[float, ...] = field(default_factory=default_grid)
    grid_Z: Tuple[float, ...] = field(default_factory=default_grid)
    grid_Z_per_n: bool = True
    draws: int = DEFAULT_DRAWS
    seed: int = DEFAULT_SEED
    eig_threshold: float = 1e-12
    pvalue_method: str = "mc"

    def __post_init__(self):
        object.__setattr__(self, "grid_T", tuple(float(v) for v in self.grid_T))
        object.__setattr__(self, "grid_Z", tuple(float(v) for v in self.grid_Z))
        if self.balanced not in (None, True, False):
            raise ConfigError("balanced must be true, false or null")
        if int(self.grid_l) < 2 or int(self.grid_l) % 2:
            raise ConfigError(f"grid_l must be an even integer >= 2, got {self.grid_l}")
        if not self.grid_T or any(v <= 0 for v in self.grid_T):
            raise ConfigError("grid_T must be a nonempty list of positive numbers")
        if not self.grid_Z or any(v <= 0 for v in self.grid_Z):
            raise ConfigError("grid_Z must be a nonempty list of positive numbers")
        if int(self.draws) < MIN_DRAWS:
            raise ConfigError(f"draws must be at least {MIN_DRAWS}")
        if int(self.seed) < 0:
            raise ConfigError("seed must be nonnegative")
        if not 0 <= self.eig_threshold < 1:
            raise ConfigError("eig_threshold must lie in [0, 1)")
        if self.pvalue_method not in PVALUE_METHODS:
            raise ConfigError(f"pvalue_method must be one of {PVALUE_METHODS}")
        object.__setattr__(self, "grid_l", int(self.grid_l))
        object.__setattr__(self, "draws", int(self.draws))
        object.__setattr__(self, "seed", int(self.seed))

    def epsilon_grid(self, n: int) -> Tuple[float, ...]:
        return tuple(v / n for v in self.grid_Z) if self.grid_Z_per_n else self.grid_Z

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_T"] = list(self.grid_T)
        d["grid_Z"] = list(self.grid_Z)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def updated(self, **changes) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def load_config(path) -> PipelineConfig:
    """Read a JSON object of PipelineConfig fields; a ``pipeline`` sub-object is also accepted."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "pipeline" in d and isinstance(d["pipeline"], dict):
        d = d["pipeline"]
    return PipelineConfig.from_dict(d)


def dump_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
