"""Run configuration (a single JSON file)."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .._rational import Q
from ..exceptions import ConfigError
from ..stage_params import MODES, desk_chain, validate_q

REPORT_SCHEMA = "aklab.report/1"

ALL_LEMMAS = (
    "block_shear",
    "block_rotation",
    "equivariance",
    "outer",
    "g_phi",
    "distri",
    "cube",
    "isometry",
    "arithmetic",
    "metric",
    "distance",
    "correlation",
    "measure",
    "points",
    "normH",
    "iterate",
)


@dataclass
class RunConfig:
    """Everything a build or verify run depends on.

    Attributes:
        n_stages: Populated desk stages N (stage N+1 only supplies alpha).
        dim_m: Dimension m.
        sigma: Rational string in (0, 1).
        mode: ``desk`` or ``paper-faithful``.
        q1: First denominator.
        factors: Growth multipliers c_n for the desk recursion.
        q_overrides: ``{n: q_n}`` forced denominators.
        k_schedule: k_n values (default k_n = n).
        tol_vol: Moser volume tolerance.
        tol_inv: Round-trip tolerance.
        tol_region: Closed-form region tolerance.
        mc_samples: Default Monte Carlo sample count.
        seed: Base seed.
        lemmas: Checks to run by ``verify``.
        out: Output directory (``AKLAB_OUT`` overrides it).
        workers: Worker pool size for ``verify``.
        stage: Stage used by the stage-specific checks (None: per-check default).
        grid: Grid size for sampled sup-norms.
        iterates: Iterates used by ``correlate``.
    """

    n_stages: int = 2
    dim_m: int = 2
    sigma: str = "1/4"
    mode: str = "desk"
    q1: int = 260
    factors: list = field(default_factory=list)
    q_overrides: dict = field(default_factory=dict)
    k_schedule: list = field(default_factory=list)
    tol_vol: float = 1e-6
    tol_inv: float = 1e-9
    tol_region: float = 1e-12
    mc_samples: int = 100_000
    seed: int = 0
    lemmas: list = field(default_factory=lambda: list(ALL_LEMMAS))
    out: str = "aklab-out"
    workers: int = 1
    stage: int | None = None
    grid: int = 256
    iterates: list = field(default_factory=lambda: [1, 2, 5])

    def __post_init__(self):
        self.q_overrides = {int(k): int(v) for k, v in dict(self.q_overrides).items()}
        self.validate()

    def validate(self) -> None:
        """Reject configurations before anything is built.

        Raises:
            ConfigError: On any invalid field.
        """
        s = Q(self.sigma)
        if not (0 < s < 1):
            raise ConfigError(f"sigma must lie strictly inside (0, 1), got {self.sigma}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.dim_m < 2:
            raise ConfigError("dim_m must be >= 2")
        if self.n_stages < 1:
            raise ConfigError("n_stages must be >= 1")
        if not validate_q(1, self.dim_m, self.q1):
            raise ConfigError("260 must divide q1")
        for n, q in self.q_overrides.items():
            if not validate_q(n, self.dim_m, q):
                raise ConfigError(f"260*{n}^4 does not divide q_{n} = {q}")
        if self.mc_samples < 100:
            raise ConfigError("mc_samples must be >= 100")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode == "paper-faithful":
            raise ConfigError("paper-faithful builds are not constructible at desk scale; use mode = desk")
        unknown = set(self.lemmas) - set(ALL_LEMMAS)
        if unknown:
            raise ConfigError(f"unknown lemmas: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_overrides"] = {str(k): v for k, v in self.q_overrides.items()}
        return d

    def stage_hash(self) -> str:
        """Hash of the fields that determine the stage files."""
        keys = ("n_stages", "dim_m", "sigma", "mode", "q1", "factors", "q_overrides", "k_schedule", "tol_vol")
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def out_dir(self) -> Path:
        return Path(os.environ.get("AKLAB_OUT", self.out))

    def chain(self):
        return desk_chain(
            self.n_stages,
            self.dim_m,
            self.sigma,
            q1=self.q1,
            factors=self.factors or None,
            q_overrides=self.q_overrides or None,
            k_schedule=self.k_schedule or None,
        )
