"""Command-line entry point: parse, dispatch, persist, summarize."""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, mle, rng, theorem_lab
from .config import SCHEMA_VERSION, ExperimentConfig, check_model, from_json, load_config
from .errors import ConfigError, HmmLimitsError, ParseError
from .hmm_model import simulate_hmm

COMMANDS = ("simulate", "entropy", "lln", "clt", "lil", "chernoff", "mixing", "forgetting", "variance",
            "dichotomy", "mle-fit", "mle-rate", "validate")

DEFAULT_REPS = {"entropy": 64, "lil": 32, "clt": 2000, "lln": 1000, "chernoff": 20_000, "variance": 2000,
                "dichotomy": 2000, "mle-rate": 400}

HELP = {
    "simulate": "simulate a symbol path at theta0",
    "entropy": "Monte Carlo entropy rate with a 3-SE interval",
    "lln": "deviation of the normalized log-likelihood derivative from its limit",
    "clt": "Kolmogorov distance to the normal law along n_grid",
    "lil": "running maxima of the iterated-logarithm ratio",
    "chernoff": "tail probabilities P(S_n/n >= x)",
    "mixing": "exact cylinder psi-mixing profile",
    "forgetting": "conditional and derivative forgetting gaps",
    "variance": "autocovariances, sigma^2 and Var(S_n)/n",
    "dichotomy": "bounded versus linear growth of E[S_n^2]",
    "mle-fit": "maximum likelihood fit on one simulated path",
    "mle-rate": "exceedance probabilities of the MLE along n_grid",
    "validate": "validate the model and report spectral data",
}


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hmmlimits", description="Limit-theorem experiments for hidden Markov log-likelihoods.")
    p.add_argument("--version", action="version", version=f"hmmlimits {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name], description=HELP[name])
        s.add_argument("--config", help="config JSON or a run manifest; flags below override it")
        s.add_argument("--model", help='model JSON {"delta": [[...]], "emit": [[...]]}')
        s.add_argument("--family", help="flip, tilted, logistic3 or affine")
        s.add_argument("--family-json", help="JSON with family parameters (A, B, omega, theta0, c)")
        s.add_argument("--theta0", type=float)
        s.add_argument("--omega", type=_floats, help="lo,hi")
        s.add_argument("--theta", type=float, help="evaluation parameter (default theta0)")
        s.add_argument("--order", type=int, choices=(0, 1, 2))
        s.add_argument("--ngrid", type=_ints, help="comma-separated increasing n values")
        s.add_argument("--reps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--x", type=_floats, help="comma-separated thresholds")
        s.add_argument("--n", type=int, help="path length")
        s.add_argument("--alpha", type=float)
        s.add_argument("--beta", type=float)
        s.add_argument("--J", type=int)
        s.add_argument("--L", type=int, help="cylinder length for mixing")
        s.add_argument("--window", type=int)
        s.add_argument("--samples", type=int)
        s.add_argument("--omega0", type=_floats, help="lo,hi for the MLE search")
        s.add_argument("--source", choices=("likelihood", "coboundary"))
        s.add_argument("--sigma2", type=float)
        s.add_argument("--out", default="runs", help="parent directory for run outputs")
        s.add_argument("--threads", type=int, default=1)
    return p


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"{what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def config_from_args(args) -> ExperimentConfig:
    base = load_config(args.config).to_json() if args.config else {}
    base["command"] = args.command
    if args.model:
        base["model"] = _read_json(args.model, "model")
    fam = dict(base.get("family") or {})
    if args.family_json:
        fam.update(_read_json(args.family_json, "family"))
    if args.family:
        if fam.get("family") not in (None, args.family):
            fam = {k: v for k, v in fam.items() if k in ("theta0", "omega")}
        fam["family"] = args.family
    if args.theta0 is not None:
        fam["theta0"] = args.theta0
    if args.omega is not None:
        fam["omega"] = args.omega
    if fam:
        if "family" not in fam:
            raise ParseError("--theta0/--omega need --family")
        base["family"] = fam
    flags = {"theta": args.theta, "order": args.order, "n_grid": args.ngrid, "reps": args.reps,
             "seed": args.seed, "x": args.x, "n": args.n, "alpha": args.alpha, "beta": args.beta,
             "J": args.J, "L": args.L, "window": args.window, "samples": args.samples,
             "omega0": args.omega0, "source": args.source, "sigma2": args.sigma2}
    base.update({k: v for k, v in flags.items() if v is not None})
    if "reps" not in base and args.command in DEFAULT_REPS:
        base["reps"] = DEFAULT_REPS[args.command]
    if "model" not in base:
        raise ParseError("a model is required (--model or --config)")
    return from_json(base)


class _Result:
    def __init__(self, results: dict, verdict: dict, tables: dict):
        self.results, self.verdict, self.tables = results, verdict, tables


def _wrap(rep) -> _Result:
    return _Result(rep.to_dict(), rep.verdict(), rep.tables())


def _run_simulate(cfg):
    n = cfg.n or 10_000
    states, symbols = simulate_hmm(cfg.source_hmm(), n, rng.stream(cfg.seed, rng.SIMULATE))
    freq = np.bincount(symbols, minlength=cfg.source_hmm().n_symbols) / n
    rows = [[t, int(y), int(z)] for t, (y, z) in enumerate(zip(states, symbols))]
    return _Result({"n": n, "symbol_frequencies": freq.tolist()}, {}, {"path": (["t", "state", "symbol"], rows)})


def _run_mixing(cfg):
    h = cfg.source_hmm()
    grid = cfg.n_grid or tuple(range(1, 9))
    prof = theorem_lab.psi_mixing_profile(h, grid, cfg.L)
    out = _wrap(prof)
    mk = theorem_lab.markov_psi(h.kernel, grid)
    out.results["hidden_chain_psi"] = mk.tolist()
    return out


def _run_chernoff(cfg):
    reps = theorem_lab.run_chernoff(cfg)
    rows = [r for rep in reps for r in rep.tables()["tail"][1]]
    header = reps[0].tables()["tail"][0]
    return _Result({"tails": [r.to_dict() for r in reps]}, {f"x={r.x}": r.verdict() for r in reps},
                   {"tail": (header, rows)})


def _run_mle_fit(cfg):
    fam = cfg.family_obj()
    omega0 = cfg.omega0 or mle.default_omega0(fam)
    res = mle.fit_path(cfg, cfg.n or 10_000, 0, omega0)
    out = res.to_dict()
    out.update({"theta0": fam.theta0, "omega0": list(omega0)})
    return _Result(out, {"converged": res.converged, "interior": not res.boundary, "concave": res.concave}, {})


def _run_validate(cfg):
    return _Result(check_model(cfg), {"valid": True}, {})


def _needs_x(cfg, default):
    return cfg if cfg.x else cfg.replace(x=list(default))


RUNNERS = {
    "simulate": _run_simulate,
    "entropy": lambda c: _wrap(theorem_lab.run_entropy(c)),
    "lln": lambda c: _wrap(theorem_lab.run_lln(c)),
    "clt": lambda c: _wrap(theorem_lab.run_clt(c)),
    "lil": lambda c: _wrap(theorem_lab.run_lil(c)),
    "chernoff": lambda c: _run_chernoff(_needs_x(c, (0.03,))),
    "mixing": _run_mixing,
    "forgetting": lambda c: _wrap(theorem_lab.run_forgetting(c)),
    "variance": lambda c: _wrap(theorem_lab.run_variance(c)),
    "dichotomy": lambda c: _wrap(theorem_lab.variance_dichotomy(c)),
    "mle-fit": _run_mle_fit,
    "mle-rate": lambda c: _wrap(mle.run_rate_experiment(_needs_x(c, (0.05,)))),
    "validate": _run_validate,
}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_dir(parent: Path, cfg: ExperimentConfig) -> Path:
    """Fresh directory ``<command>-<hash>`` (suffixed if taken)."""
    base = f"{cfg.command}-{cfg.digest()[:12]}"
    d = parent / base
    k = 2
    while d.exists():
        d = parent / f"{base}-{k}"
        k += 1
    d.mkdir(parents=True)
    return d


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in _clean(r)])


def _fmt(v) -> str:
    return json.dumps(v, sort_keys=True)


def summary_lines(report: dict) -> list[str]:
    """Scalars and short lists from the persisted report, rendered as their JSON text."""
    lines = [f"{report['command']}  (spec_version {report['spec_version']})"]
    items = [(f"results.{k}", v) for k, v in report["results"].items()]
    items += [(f"verdict.{k}", v) for k, v in report["verdict"].items()]
    width = max((len(k) for k, _ in items), default=0)
    for k, v in items:
        if isinstance(v, (list, dict)) and len(_fmt(v)) > 100:
            lines.append(f"{k:<{width}}  (see CSV / report.json)")
        else:
            lines.append(f"{k:<{width}}  {_fmt(v)}")
    return lines


def execute(cfg: ExperimentConfig, out_parent: Path) -> Path:
    """Run ``cfg`` and persist report, CSVs and manifest; returns the run directory."""
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    check_model(cfg)
    res = RUNNERS[cfg.command](cfg)
    d = run_dir(Path(out_parent), cfg)
    files = []
    for name, (header, rows) in sorted(res.tables.items()):
        write_csv(d / f"{name}.csv", header, rows)
        files.append(f"{name}.csv")
    report = _clean({"spec_version": SCHEMA_VERSION, "command": cfg.command, "config": cfg.to_json(),
                     "results": res.results, "verdict": res.verdict, "files": files})
    (d / "report.json").write_text(_dump(report), encoding="utf-8")
    manifest = {"spec_version": SCHEMA_VERSION, "config": cfg.to_json(), "seed": cfg.seed,
                "command": cfg.command, "input_hash": cfg.digest(), "started": started,
                "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
                "outputs": ["report.json", *files], "version": __version__}
    (d / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    for line in summary_lines(report):
        print(line)
    print(f"output: {d}")
    return d


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rng.set_threads(args.threads)
        cfg = config_from_args(args)
        execute(cfg, Path(args.out))
    except HmmLimitsError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code if hasattr(exc, "exit_code") else 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
