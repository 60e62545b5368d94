"""Command-line front end: configuration, dispatch and result files.

Every subcommand builds an :class:`ExperimentConfig`, runs it through
:func:`run` and writes the :class:`ExperimentResult` with :func:`emit`.
Settings are resolved as command line over ``--config`` file over defaults.
Exit codes: 0 success, 2 invalid input, 3 capacity exceeded, 4 numerical
failure.
"""

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .environment import Environment, parse_law, sample_environment
from .errors import StretchPolyError, ValidationError
from .io import SCHEMA_VERSION, atomic_write_text, csv_text, dumps, plot_data_text
from .validation import check_beta, check_delta, check_dims, check_nonneg_int, check_vector

COMMANDS = ("gen-env", "enumerate", "dp", "mc-annealed", "renewal", "clt", "lln", "mixingale", "replica")

DEFAULTS = {
    "dims": 2,
    "seed": 0,
    "out": None,
    "format": "json",
    "jobs": 1,
    "beta": 0.0,
    "h": [1.0],
    "delta": None,
    "law": "bernoulli:p=0.1",
    "n": 8,
    "n_max": 10,
    "n_env": 20,
    "radius": None,
    "env": None,
    "verify_renewal": False,
    "kind": "basic",
    "method": "enumerate",
    "mode": "quenched",
    "ns": [25, 100, 400],
    "alphas": None,
    "eps": [0.25],
    "ell": 4,
    "k_max": 8,
    "M": None,
    "cases": 1000,
}


@dataclass
class ExperimentConfig:
    """Validated settings for one run; ``echo()`` is embedded in every result."""

    command: str
    dims: int = 2
    seed: int = 0
    out: str = None
    format: str = "json"
    jobs: int = 1
    beta: float = 0.0
    h: list = field(default_factory=lambda: [1.0])
    delta: float = None
    law: str = "bernoulli:p=0.1"
    n: int = 8
    n_max: int = 10
    n_env: int = 20
    radius: int = None
    env: str = None
    verify_renewal: bool = False
    kind: str = "basic"
    method: str = "enumerate"
    mode: str = "quenched"
    ns: list = field(default_factory=lambda: [25, 100, 400])
    alphas: list = None
    eps: list = field(default_factory=lambda: [0.25])
    ell: int = 4
    k_max: int = 8
    M: int = None
    cases: int = 1000

    def validate(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        self.dims = check_dims(self.dims)
        self.beta = check_beta(self.beta)
        self.h = [float(c) for c in check_vector(self.h[0] if len(self.h) == 1 else self.h, self.dims)]
        if self.delta is not None:
            self.delta = check_delta(self.delta, self.dims)
        parse_law(self.law)
        if self.format not in ("json", "csv"):
            raise ValidationError(f"format must be 'json' or 'csv', got {self.format!r}")
        for name in ("n", "n_max", "ell", "k_max", "cases"):
            check_nonneg_int(getattr(self, name), name)
        check_nonneg_int(self.jobs, "jobs", minimum=1)
        check_nonneg_int(self.n_env, "n_env", minimum=1)
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        return self

    def cone(self):
        from .polymer import ConeSpec

        return ConeSpec.make(self.h, dims=self.dims, delta=self.delta)

    def echo(self):
        return asdict(self)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    data: dict
    table: tuple = None  # (header, rows)
    plot: tuple = None  # (x, y, err)
    seeds: list = field(default_factory=list)
    wall_time: float = math.nan

    def document(self):
        """The JSON payload; wall time is left out so equal inputs give equal bytes."""
        return {
            "schema": SCHEMA_VERSION,
            "version": __version__,
            "command": self.config.command,
            "config": self.config.echo(),
            "seeds": self.seeds,
            "data": self.data,
        }


# ---------------------------------------------------------------------------
# experiments


def _environment(cfg, radius):
    if cfg.env:
        env = Environment.load(cfg.env)
        if env.dims != cfg.dims:
            raise ValidationError(f"environment file has dims={env.dims}, config says {cfg.dims}")
        return env
    return sample_environment(cfg.law, cfg.dims, radius, cfg.seed)


def _run_gen_env(cfg):
    radius = cfg.radius if cfg.radius is not None else cfg.n
    env = sample_environment(cfg.law, cfg.dims, radius, cfg.seed)
    data = {"header": env.header(), "trap_fraction": env.trap_fraction(), "origin_blocked": env.origin_blocked(),
            "text": env.to_text()}
    return ExperimentResult(cfg, data, seeds=[cfg.seed])


def _run_enumerate(cfg):
    from .exactenum import enumerate_basic, enumerate_Q, verify_renewal

    n = cfg.n
    env = _environment(cfg, cfg.radius if cfg.radius is not None else 2 * n + 1)
    if cfg.kind == "Q":
        tab = enumerate_Q(env, cfg.h, cfg.beta, n)
        data = {"kind": tab.kind, "Q": [tab.partition_function(k) for k in range(n + 1)]}
        rows = [[k, v] for k, v in enumerate(data["Q"])]
        return ExperimentResult(cfg, data, (["n", "Q"], rows), seeds=[env.seed])
    t, f = enumerate_basic(env, cfg.cone(), cfg.h, cfg.beta, 0.0, n)
    data = {"t_totals": t.totals(), "f_totals": f.totals()}
    if cfg.verify_renewal:
        res = [verify_renewal(t, f, k) for k in range(1, n + 1)]
        data["renewal_residuals"] = res
        data["residual"] = max(res)
    rows = [[k, t.total(k), f.total(k)] for k in range(n + 1)]
    return ExperimentResult(cfg, data, (["n", "t", "f"], rows), seeds=[env.seed])


def _run_dp(cfg):
    from .transfer import dp_quenched

    env = _environment(cfg, cfg.radius if cfg.radius is not None else cfg.n)
    sl = dp_quenched(env, cfg.h, cfg.beta, cfg.n)
    data = dict(sl.metadata())
    data["log_total"] = sl.log_total()
    if np.isfinite(data["log_total"]):
        mean, cov = sl.moments()
        data["mean"], data["cov"] = mean, cov
    vals = sl.linear()
    keep = vals > 0
    rows = [[*map(int, p), float(v)] for p, v in zip(sl.points[keep], vals[keep])]
    header = [f"x{i + 1}" for i in range(cfg.dims)] + ["value"]
    return ExperimentResult(cfg, data, (header, rows), seeds=[env.seed])


def _run_mc_annealed(cfg):
    from .transfer import ensemble_log_totals

    logs = ensemble_log_totals(cfg.law, cfg.dims, cfg.h, cfg.beta, cfg.n, cfg.n_env, cfg.seed, cfg.jobs)
    vals = np.exp(logs)
    est = vals.mean(axis=0)
    err = vals.std(axis=0, ddof=1) / math.sqrt(cfg.n_env) if cfg.n_env > 1 else np.full(len(est), math.nan)
    ns = np.arange(cfg.n + 1)
    data = {"n": ns, "estimate": est, "stderr": err, "n_env": cfg.n_env}
    rows = [[int(k), e, s] for k, e, s in zip(ns, est, err)]
    return ExperimentResult(cfg, data, (["n", "estimate", "stderr"], rows), (ns, est, err), seeds=[cfg.seed])


def _run_renewal(cfg):
    from .renewal import fit_renewal, renewal_mass

    model = fit_renewal(cfg.law, cfg.dims, cfg.h, cfg.beta, cfg.n_max, cfg.cone(), cfg.method)
    data = model.to_dict()
    mass = renewal_mass(model.law_, cfg.n_max)
    data["renewal_mass"] = mass.to_dict()
    ns = np.arange(cfg.n_max + 1)
    tbar = model.predict(ns)
    rows = [[int(k), float(v)] for k, v in zip(ns, tbar)]
    return ExperimentResult(cfg, data, (["n", "tbar"], rows), (ns, tbar, None))


def _default_alphas(dims):
    out = []
    for a in (0.5, 1.0):
        v = [0.0] * dims
        v[0] = a
        out.append(v)
    v = [0.0] * dims
    v[1] = 1.0
    out.append(v)
    return out


def _run_clt(cfg):
    alphas = cfg.alphas or _default_alphas(cfg.dims)
    if cfg.mode == "annealed":
        from .renewal import annealed_clt_check, fit_renewal

        model = fit_renewal(cfg.law, cfg.dims, cfg.h, cfg.beta, cfg.n_max, cfg.cone(), cfg.method)
        chk = annealed_clt_check(model.law_, alphas, cfg.ns, model.v_, model.Sigma_, model.kappa0_)
        data = chk.to_dict()
        return ExperimentResult(cfg, data)
    from .harness import quenched_clt

    res = quenched_clt(cfg.law, cfg.dims, cfg.h, cfg.beta, cfg.ns, alphas, cfg.n_env, cfg.seed, jobs=cfg.jobs)
    rows = [[int(n), m, q] for n, m, q in zip(res.n, res.median_deviation, res.iqr_deviation)]
    return ExperimentResult(cfg, res.to_dict(), (["n", "median_deviation", "iqr_deviation"], rows),
                            (res.n, res.median_deviation, res.iqr_deviation / 2), seeds=[cfg.seed])


def _run_lln(cfg):
    from .harness import empirical_lln, ensemble_slice_stats, pooled_moments

    ns = sorted(cfg.ns)
    recs = ensemble_slice_stats(cfg.law, cfg.dims, cfg.h, cfg.beta, [ns[-1]], cfg.n_env, cfg.seed, jobs=cfg.jobs)
    v = pooled_moments(recs, 0)[0] / ns[-1]
    res = empirical_lln(cfg.law, cfg.dims, cfg.h, cfg.beta, ns, cfg.eps, cfg.n_env, cfg.seed, v, cfg.jobs)
    rows = [[int(n), float(e), float(res.mean_tail[i, j]), float(res.median_tail[i, j])]
            for i, n in enumerate(res.n) for j, e in enumerate(res.eps)]
    return ExperimentResult(cfg, res.to_dict(), (["n", "eps", "mean_tail", "median_tail"], rows),
                            (res.n, res.mean_tail[:, 0], None), seeds=[cfg.seed])


def _run_mixingale(cfg):
    from .harness import mixingale_profile
    from .renewal import fit_renewal

    model = fit_renewal(cfg.law, cfg.dims, cfg.h, cfg.beta, cfg.n_max, cfg.cone())
    speed = float(np.linalg.norm(model.v_))
    prof = mixingale_profile(cfg.ell, range(cfg.k_max + 1), cfg.law, cfg.beta, cfg.h, cfg.cone(), speed,
                             model.lambda_, cfg.M)
    data = prof.to_dict()
    data["lambda"] = model.lambda_
    rows = [[int(k), b, f] for k, b, f in zip(prof.k, prof.backward, prof.forward)]
    return ExperimentResult(cfg, data, (["k", "backward", "forward"], rows), (prof.k, prof.backward, None))


def _run_replica(cfg):
    from .harness import HalfSpaceAlgebra
    from .replica import (
        conditional_monotonicity_check,
        factorization_check,
        interaction_defect,
        last_step_bound_check,
        random_geometry,
        random_path,
    )

    rng = np.random.default_rng(cfg.seed)
    cone = cfg.cone()
    cases = []
    for i in range(cfg.cases):
        g, gp, e, ep = (random_path(rng, cfg.dims, int(rng.integers(0, cfg.n + 1))) for _ in range(4))
        x, y, xp, yp, ell, m, mp = random_geometry(rng, cone, min(cfg.ell, cfg.n), min(cfg.ell, cfg.n))
        alg = HalfSpaceAlgebra(int(rng.integers(0, 2 * cfg.ell + 2)), 0.5)
        fac = factorization_check(x, y, xp, yp, ell, m, mp, cfg.law, cfg.beta, alg, cfg.h, cone)
        lhs, rhs = conditional_monotonicity_check(x, y, xp, yp, ell, m, mp, cfg.law, cfg.beta, alg, cfg.h, cone)
        cases.append({
            "case": i,
            "defect": interaction_defect(g, gp, cfg.law, cfg.beta),
            "slack": last_step_bound_check(g, gp, e, ep, cfg.law, cfg.beta),
            "geometry": f"{x}->{y}|{xp}->{yp}|{ell},{m},{mp}",
            "lhs": lhs,
            "rhs": rhs,
            "factorization": fac.value,
            "disjoint": fac.disjoint,
        })
    viol = {
        "defect": sum(c["defect"] < 0 for c in cases),
        "slack": sum(c["slack"] < -1e-12 for c in cases),
        "monotonicity": sum(c["lhs"] > c["rhs"] + 1e-12 for c in cases),
        "factorization": sum(c["disjoint"] and abs(c["factorization"]) > 1e-12 for c in cases),
    }
    keys = list(cases[0]) if cases else ["case"]
    rows = [[c[k] for k in keys] for c in cases]
    return ExperimentResult(cfg, {"cases": len(cases), "violations": viol}, (keys, rows), seeds=[cfg.seed])


_RUNNERS = {
    "gen-env": _run_gen_env,
    "enumerate": _run_enumerate,
    "dp": _run_dp,
    "mc-annealed": _run_mc_annealed,
    "renewal": _run_renewal,
    "clt": _run_clt,
    "lln": _run_lln,
    "mixingale": _run_mixingale,
    "replica": _run_replica,
}


def run(config):
    """Validate ``config``, run the experiment and return its result."""
    config.validate()
    t0 = time.perf_counter()
    result = _RUNNERS[config.command](config)
    result.wall_time = time.perf_counter() - t0
    return result


def emit(result, fmt=None, out=None):
    """Write ``result`` as JSON (full) or CSV (main table); returns the paths written.

    With ``out=None`` the text goes to stdout.  When the result carries
    plot data and ``out`` is a path, ``<out>.plot.csv`` is written too.
    ``gen-env`` in CSV mode writes the environment file itself.
    """
    fmt = fmt or result.config.format
    if fmt == "json":
        text = dumps(result.document())
    elif result.config.command == "gen-env":
        text = result.data["text"]
    elif result.table is None:
        raise ValidationError(f"{result.config.command} has no table output; use --format json")
    else:
        header, rows = result.table
        text = csv_text(header, rows, comments=[f"schema={SCHEMA_VERSION}", f"command={result.config.command}"])
    written = []
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)
        written.append(out)
        if result.plot is not None:
            x, y, err = result.plot
            path = f"{out}.plot.csv"
            atomic_write_text(path, plot_data_text(x, y, err, comments=[f"command={result.config.command}"]))
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in text.replace(",", " ").split()]


def _vectors(text):
    return [_floats(v) for v in text.split(";") if v.strip()]


def build_parser():
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--dims", type=int, default=S, help="lattice dimension D (2..5)")
    g.add_argument("--seed", type=int, default=S, help="master seed")
    g.add_argument("--out", default=S, help="output path (default: stdout)")
    g.add_argument("--format", choices=("json", "csv"), default=S)
    g.add_argument("--jobs", type=int, default=S, help="worker processes for ensembles")
    g.add_argument("--config", default=S, help="JSON file of settings (overridden by flags)")
    m = common.add_argument_group("model")
    m.add_argument("--beta", type=float, default=S)
    m.add_argument("--h", type=_floats, default=S, help="force; one number means h*e1")
    m.add_argument("--delta", type=float, default=S, help="cone aperture, in (0, 1/sqrt(D))")
    m.add_argument("--law", default=S, help="e.g. bernoulli:p=0.1, det:v=1.0, exp:rate=1.0")

    parser = argparse.ArgumentParser(prog="stretchpoly", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("gen-env", "sample an environment box")
    p.add_argument("--radius", type=int, default=S)
    p = add("enumerate", "exact tables by path enumeration")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--env", default=S, help="environment file (default: sample from --seed)")
    p.add_argument("--kind", choices=("basic", "Q"), default=S)
    p.add_argument("--verify-renewal", dest="verify_renewal", action="store_true", default=S)
    p = add("dp", "quenched transfer recursion")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--env", default=S)
    p = add("mc-annealed", "Monte Carlo annealed partition functions")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--n-env", dest="n_env", type=int, default=S)
    p = add("renewal", "fit the annealed renewal model")
    p.add_argument("--nmax", dest="n_max", type=int, default=S)
    p.add_argument("--method", choices=("enumerate", "cone-dp"), default=S)
    p = add("clt", "characteristic-function CLT statistics")
    p.add_argument("--mode", choices=("quenched", "annealed"), default=S)
    p.add_argument("--n", dest="ns", type=_ints, default=S, help="lengths, e.g. '12,24'")
    p.add_argument("--alphas", type=_vectors, default=S, help="e.g. '0.5,0;1,0'")
    p.add_argument("--n-env", dest="n_env", type=int, default=S)
    p.add_argument("--nmax", dest="n_max", type=int, default=S)
    p.add_argument("--method", choices=("enumerate", "cone-dp"), default=S)
    p = add("lln", "quenched large-deviation tails")
    p.add_argument("--n", dest="ns", type=_ints, default=S)
    p.add_argument("--eps", type=_floats, default=S)
    p.add_argument("--n-env", dest="n_env", type=int, default=S)
    p = add("mixingale", "exact conditional second-moment profile")
    p.add_argument("--ell", type=int, default=S)
    p.add_argument("--kmax", dest="k_max", type=int, default=S)
    p.add_argument("--M", type=int, default=S)
    p.add_argument("--nmax", dest="n_max", type=int, default=S)
    p = add("replica", "randomized attractivity and factorization cases")
    p.add_argument("--cases", type=int, default=S)
    p.add_argument("--n", type=int, default=S, help="largest random path length")
    p.add_argument("--ell", type=int, default=S, help="largest t/f length in geometries")
    return parser


def config_from_args(argv=None):
    """Resolve flags, the optional config file and defaults into an :class:`ExperimentConfig`."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    settings = dict(DEFAULTS)
    path = args.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                filecfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config file {path!r}: {exc}") from None
        unknown = set(filecfg) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(filecfg)
    settings.update(args)
    h = settings["h"]
    settings["h"] = [float(h)] if np.ndim(h) == 0 else [float(c) for c in h]
    return ExperimentConfig(command=command, **settings)


def main(argv=None):
    try:
        cfg = config_from_args(argv)
        result = run(cfg)
        emit(result, cfg.format, cfg.out)
    except StretchPolyError as exc:
        limit = f" (parameter {exc.parameter}, limit {exc.limit})" if getattr(exc, "parameter", None) else ""
        print(f"stretchpoly: error: {exc}{limit}", file=sys.stderr)
        return exc.exit_code
    print(f"stretchpoly: {cfg.command} done in {result.wall_time:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
