"""Experiment configuration: JSON schema, defaults, validation and model assembly."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deriv_engine import FAMILIES, ParamFamily, constant_family, make_family
from .errors import ModelError, ParseError, RangeError
from .hmm_model import EmissionChannel, HmmSpec, build_hmm, validate_channel
from .limit_stats import IncrementModel
from .markov_core import validate_kernel

SCHEMA_VERSION = "1.0"

# Ω used when a shipped family is named without an explicit interval
DEFAULT_OMEGA = {"flip": (0.01, 0.99), "tilted": (0.01, 0.99), "logistic3": (-3.0, 3.0)}

# Replica counts below this are refused, except for the commands listed after it
MIN_REPS = 100
SMALL_REPS_OK = ("entropy", "lil", "simulate", "validate", "mixing", "forgetting", "mle-fit")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs. ``to_json`` gives the canonical form.

    ``model`` is ``{"delta", "emit"}``; ``family`` names the parameterization
    (``None`` means a θ-free family built from ``delta``). When a family is
    given its kernel at θ0 is the data-generating kernel.
    """

    command: str = ""
    model: dict = field(default_factory=dict)
    family: dict | None = None
    theta: float | None = None
    order: int = 0
    n_grid: tuple[int, ...] = ()
    reps: int = 1000
    seed: int = 0
    x: tuple[float, ...] = ()
    alpha: float = 0.5
    beta: float = 0.1
    J: int = 50
    L: int = 3
    n: int | None = None
    window: int = 20
    samples: int = 200
    omega0: tuple[float, float] | None = None
    source: str = "likelihood"
    g: tuple[float, ...] | None = None
    sigma2: float | None = None
    autocov_n: int = 200_000
    autocov_reps: int = 64

    def to_json(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        return from_json({**self.to_json(), **kw})

    # model assembly

    def channel(self) -> EmissionChannel:
        return validate_channel(self.model["emit"])

    def family_obj(self) -> ParamFamily:
        return _build_family(self.family, self.model)

    @property
    def theta0(self) -> float:
        return self.family_obj().theta0

    @property
    def theta_eval(self) -> float:
        return self.theta0 if self.theta is None else float(self.theta)

    def source_hmm(self) -> HmmSpec:
        fam = self.family_obj()
        return build_hmm(fam.kernel_at(fam.theta0), self.channel())

    def context(self, order: int | None = None) -> IncrementModel:
        return IncrementModel(self.family_obj(), self.channel(), self.theta_eval,
                              self.order if order is None else order)


def _build_family(spec: dict | None, model: dict) -> ParamFamily:
    if spec is None:
        return constant_family(model["delta"])
    spec = dict(spec)
    fid = spec.pop("family")
    theta0 = spec.pop("theta0")
    omega = spec.pop("omega")
    return make_family(fid, theta0, tuple(omega), **spec)


_INT_FIELDS = ("order", "reps", "seed", "J", "L", "window", "samples", "autocov_n", "autocov_reps")
_FLOAT_FIELDS = ("alpha", "beta")


def _num(obj, name, kind):
    v = obj[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"field {name!r}: expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ParseError(f"field {name!r}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _matrix(obj, name):
    try:
        m = np.asarray(obj[name], dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"field {name!r}: expected a numeric matrix") from None
    if m.ndim != 2:
        raise ParseError(f"field {name!r}: expected a matrix, got {m.ndim} dimensions")
    return m.tolist()


def from_json(obj: dict) -> ExperimentConfig:
    """Validate a config dict and fill defaults."""
    if not isinstance(obj, dict):
        raise ParseError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(obj) - known - {"spec_version"})
    if unknown:
        raise ParseError(f"unknown field(s): {', '.join(unknown)}")
    kw = {}
    if "command" in obj:
        if not isinstance(obj["command"], str):
            raise ParseError("field 'command': expected a string")
        kw["command"] = obj["command"]
    model = obj.get("model")
    if not isinstance(model, dict) or "delta" not in model or "emit" not in model:
        raise ParseError("field 'model': expected {\"delta\": [[...]], \"emit\": [[...]]}")
    kw["model"] = {"delta": _matrix(model, "delta"), "emit": _matrix(model, "emit")}
    fam = obj.get("family")
    if fam is not None:
        if not isinstance(fam, dict) or "family" not in fam:
            raise ParseError("field 'family': expected an object with a 'family' name")
        if fam["family"] not in FAMILIES:
            raise ParseError(f"field 'family.family': unknown family {fam['family']!r}")
        fam = dict(fam)
        if "omega" not in fam:
            if fam["family"] not in DEFAULT_OMEGA:
                raise ParseError("field 'family.omega' is required for affine families")
            fam["omega"] = list(DEFAULT_OMEGA[fam["family"]])
        if "theta0" not in fam:
            raise ParseError("field 'family.theta0' is required")
        fam["theta0"] = _num(fam, "theta0", float)
        om = fam["omega"]
        if not isinstance(om, (list, tuple)) or len(om) != 2:
            raise ParseError("field 'family.omega': expected [lo, hi]")
        fam["omega"] = [float(om[0]), float(om[1])]
        for key in ("A", "B"):
            if key in fam:
                fam[key] = _matrix(fam, key)
        if "omega_valid" in fam:
            fam["omega_valid"] = [float(v) for v in fam["omega_valid"]]
        kw["family"] = fam
    for name in _INT_FIELDS:
        if name in obj:
            kw[name] = _num(obj, name, int)
    for name in _FLOAT_FIELDS:
        if name in obj:
            kw[name] = _num(obj, name, float)
    for name in ("theta", "sigma2"):
        if obj.get(name) is not None:
            kw[name] = _num(obj, name, float)
    if obj.get("n") is not None:
        kw["n"] = _num(obj, "n", int)
    if "n_grid" in obj:
        if not isinstance(obj["n_grid"], (list, tuple)):
            raise ParseError("field 'n_grid': expected a list of integers")
        kw["n_grid"] = tuple(_num({"n_grid": v}, "n_grid", int) for v in obj["n_grid"])
    if "x" in obj:
        if not isinstance(obj["x"], (list, tuple)):
            raise ParseError("field 'x': expected a list of numbers")
        kw["x"] = tuple(_num({"x": v}, "x", float) for v in obj["x"])
    if obj.get("omega0") is not None:
        om = obj["omega0"]
        if not isinstance(om, (list, tuple)) or len(om) != 2:
            raise ParseError("field 'omega0': expected [lo, hi]")
        kw["omega0"] = (float(om[0]), float(om[1]))
    if "source" in obj:
        if obj["source"] not in ("likelihood", "coboundary"):
            raise ParseError("field 'source': expected 'likelihood' or 'coboundary'")
        kw["source"] = obj["source"]
    if obj.get("g") is not None:
        kw["g"] = tuple(float(v) for v in obj["g"])
    cfg = ExperimentConfig(**kw)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: ExperimentConfig) -> None:
    fam = cfg.family
    if fam is not None:
        lo, hi = fam["omega"]
        if not lo < fam["theta0"] < hi:
            raise RangeError(f"theta0={fam['theta0']!r} outside Ω=({lo}, {hi})")
        if cfg.theta is not None and not lo < cfg.theta < hi:
            raise RangeError(f"theta={cfg.theta!r} outside Ω=({lo}, {hi})")
        if cfg.omega0 is not None and not lo < cfg.omega0[0] < cfg.omega0[1] < hi:
            raise RangeError(f"omega0={list(cfg.omega0)} must be a sub-interval of Ω=({lo}, {hi})")
    elif cfg.theta is not None and not -1 < cfg.theta < 1:
        raise RangeError("theta must lie in (-1, 1) for a θ-free model")
    if not 0 <= cfg.order <= 2:
        raise RangeError("order must be 0, 1 or 2")
    if cfg.n_grid:
        g = np.asarray(cfg.n_grid)
        if g[0] < 1 or np.any(np.diff(g) <= 0):
            raise RangeError("n_grid must be positive and strictly increasing")
    if cfg.reps < 1 or (cfg.reps < MIN_REPS and cfg.command not in SMALL_REPS_OK):
        raise RangeError(f"reps={cfg.reps} below the minimum of {MIN_REPS} for {cfg.command or 'this run'}")
    if cfg.seed < 0:
        raise RangeError("seed must be non-negative")
    if cfg.n is not None and cfg.n < 1:
        raise RangeError("n must be positive")
    if cfg.sigma2 is not None and cfg.sigma2 <= 0:
        raise RangeError("sigma2 must be positive")


def load_config(path) -> ExperimentConfig:
    """Read a config file, or the config echoed inside a run manifest."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(obj, dict) and "config" in obj and "model" not in obj:
        obj = obj["config"]
    return from_json(obj)


def check_model(cfg: ExperimentConfig) -> dict:
    """Validate the model block; returns a summary of its spectral data."""
    from .markov_core import check_primitive

    kernel = validate_kernel(cfg.model["delta"])
    info = check_primitive(kernel)
    h = build_hmm(kernel, cfg.channel())
    try:
        fam = cfg.family_obj()
    except KeyError as exc:
        raise ModelError(f"family lacks parameter {exc}") from None
    return {"n_states": h.n_states, "n_symbols": h.n_symbols,
            "lambda2_modulus": info.lambda2_modulus, "primitivity_exponent": info.primitivity_exponent,
            "stationary": h.pi.probs.tolist(), "family": fam.family_id, "theta0": fam.theta0}


def config_for(fam: ParamFamily, channel, command: str = "", **kw) -> ExperimentConfig:
    """Config describing an in-memory family and channel (for library use)."""
    if not isinstance(channel, EmissionChannel):
        channel = validate_channel(channel)
    fj = json.loads(json.dumps(fam.to_json(), default=list))
    model = {"delta": fam.kernel_at(fam.theta0).rows.tolist(), "emit": channel.emit.tolist()}
    return from_json({"command": command, "model": model, "family": fj, **kw})
