"""Experiment configuration: a single JSON document, overridable from the CLI."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

EXPERIMENTS = ("fig1", "fig2", "fig3", "sieve", "validate", "trajectory")
STOCHASTIC = ("fig1", "fig2", "fig3", "trajectory")
MAX_SEED = 2**64 - 1
MAX_TRAJECTORY_DT = 0.01

_DEFAULTS = {
    "fig1": dict(model="atom", omega=50.0, R=100.0, eta=0.1, dt=1e-3, sample_times=[0.5, 1.0, 10.0], n_traj=10_000, n_phi=25),
    "fig2": dict(dt=1e-3, taus=[0.05, 0.5, 5.0], n_traj=10_000, bins=50),
    "fig3": dict(dt=1e-3, t_final=6.0, n_traj=10_000, n_display=3, sample_every=10),
    "sieve": dict(model="atom", omega=100.0, eta=0.0, grid=400, r=1.0, fock_dim=32),
    "validate": dict(),
    "trajectory": dict(model="atom", omega=2.0, kind="diffusive", R=0.0, phi=0.0, eta=1.0, dt=1e-3, t_final=3.0, r=3.0, fock_dim=32),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one CLI run.  ``None`` means "use the experiment default".

    ``R`` is the local-oscillator amplitude, ``r``/``theta`` the coherent
    amplitude of the oscillator model.
    """

    experiment: str
    model: str | None = None
    omega: float | None = None
    fock_dim: int | None = None
    r: float | None = None
    theta: float = 0.0
    kind: str | None = None
    R: float | None = None
    phi: float | None = None
    phis: list | None = None
    n_phi: int | None = None
    eta: float | None = None
    dt: float | None = None
    t_final: float | None = None
    sample_times: list | None = None
    taus: list | None = None
    n_traj: int | None = None
    n_display: int | None = None
    sample_every: int | None = None
    bins: int | None = None
    grid: int | None = None
    initial: str | None = None
    master_seed: int | None = None
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        if "experiment" not in data:
            raise ConfigError("experiment: missing (one of " + ", ".join(EXPERIMENTS) + ")")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def resolved(self) -> "ExperimentConfig":
        """Fill experiment defaults and validate every field."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: {self.experiment!r} is not one of {', '.join(EXPERIMENTS)}")
        filled = {k: v for k, v in _DEFAULTS[self.experiment].items() if getattr(self, k) is None}
        cfg = replace(self, **filled)
        cfg._validate()
        return cfg

    def _validate(self):
        def need(cond, field, msg):
            if not cond:
                raise ConfigError(f"{field}: {msg} (got {getattr(self, field)!r})")

        def finite(field, lo=None, hi=None, strict_lo=False):
            v = getattr(self, field)
            if v is None:
                return
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v), field, "must be a finite number")
            if lo is not None:
                need(v > lo if strict_lo else v >= lo, field, f"must be {'>' if strict_lo else '>='} {lo}")
            if hi is not None:
                need(v <= hi, field, f"must be <= {hi}")

        def integer(field, lo):
            v = getattr(self, field)
            if v is None:
                return
            need(isinstance(v, int) and not isinstance(v, bool) and v >= lo, field, f"must be an integer >= {lo}")

        def number_list(field, lo=None):
            v = getattr(self, field)
            if v is None:
                return
            need(isinstance(v, list) and len(v) > 0, field, "must be a non-empty list")
            for x in v:
                need(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x), field, "entries must be finite numbers")
                if lo is not None:
                    need(x >= lo, field, f"entries must be >= {lo}")

        need(self.model in (None, "atom", "qbm"), "model", "must be 'atom' or 'qbm'")
        need(self.kind in (None, "unconditional", "jump", "diffusive"), "kind", "must be unconditional, jump or diffusive")
        need(self.initial in (None, "excited", "ground", "plus_x", "plus_y", "mixed", "coherent", "cat", "subspace_mixed"), "initial", "unknown initial state")
        finite("omega", 0)
        finite("r", 0)
        finite("theta")
        finite("R", 0)
        finite("phi")
        finite("eta", 0, 1)
        finite("dt", 0, strict_lo=True)
        finite("t_final", 0)
        integer("fock_dim", 2)
        integer("n_traj", 2)
        integer("n_phi", 1)
        integer("n_display", 1)
        integer("sample_every", 1)
        integer("bins", 2)
        integer("grid", 8)
        number_list("phis")
        number_list("sample_times", 0)
        number_list("taus", 0)
        if self.taus is not None:
            need(all(t > 0 for t in self.taus), "taus", "entries must be > 0")
        if self.fock_dim is not None:
            need(self.fock_dim <= 256, "fock_dim", "must be <= 256")
        if self.master_seed is not None:
            need(isinstance(self.master_seed, int) and not isinstance(self.master_seed, bool) and 0 <= self.master_seed <= MAX_SEED, "master_seed", "must be an unsigned 64-bit integer")
        elif self.experiment in STOCHASTIC:
            raise ConfigError(f"master_seed: required for '{self.experiment}' (pass --seed)")
        if self.experiment == "trajectory" and self.dt is not None:
            need(self.dt <= MAX_TRAJECTORY_DT, "dt", f"must be <= {MAX_TRAJECTORY_DT} (master-equation step cap)")
        if self.sample_times is not None and self.t_final is not None and self.experiment == "trajectory":
            need(max(self.sample_times) <= self.t_final, "sample_times", "must lie in [0, t_final]")
