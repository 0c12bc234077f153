"""Command-line front end: ``run``, ``compare`` and ``verify``.

Configuration files are flat ``key = value`` text with ``#`` comments.
Command-line flags override values read from ``--config``.

Exit codes: 0 success, 1 solver or input error, 2 missing input file,
3 verification problem not certified, 4 shrinkage bound violated.
"""

import argparse
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import io
from .core import FactorizationError, ProxError, make_state
from .strategies import SCHEMES, AccelConfig, classify_applicability, solve

PROBLEM_KINDS = ("bar", "flag", "collision", "mesh", "wire", "planar", "deconv")
EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_UNCERTIFIED, EXIT_VIOLATED = 0, 1, 2, 3, 4
TRACE_HEADER = ("k", "wall_ms", "R_c", "R_f", "accepted")
# stopping is driven by R_c; the raw residual test is effectively disabled
_NO_RAW_STOP = np.finfo(float).tiny


@dataclass
class RunConfig:
    """Everything needed to reproduce one solve.

    ``epsilon`` is the threshold on the normalized combined residual
    ``R_c``. ``scheme = auto`` picks the recommended scheme for the problem.
    Empty ``mesh`` / ``image`` select the built-in desk scenarios.
    """

    problem: str = "bar"
    material: str = "stvk"
    scheme: str = "auto"
    m: int = 6
    mu: float = 1.0
    max_iters: int = 2000
    epsilon: float = 1e-6
    seed: int = 0
    alpha: float = 1.7
    out: str = "out"
    mesh: str = ""
    image: str = ""
    size: int = 16
    lam1: float = 50.0
    lam2: float = 0.5
    timing: bool = True

    def __post_init__(self):
        if self.problem not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEM_KINDS}")

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key], val)
        return cls(**kwargs)

    @classmethod
    def read(cls, path):
        return cls.from_dict(io.read_config(path))

    def write(self, path):
        io.write_config(path, asdict(self))


def _coerce(kind, val):
    if not isinstance(val, str):
        return val
    if kind in (bool, "bool"):
        low = val.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {val!r}")
    if kind in (int, "int"):
        return int(val)
    if kind in (float, "float"):
        return float(val)
    return val


# -- problem construction ---------------------------------------------------------------

@dataclass
class Instance:
    problem: object
    state0: object
    scale: float
    artifact: callable


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(path)


def build_instance(cfg):
    """Problem, start state, residual scale and a writer for the final state."""
    if cfg.problem in ("bar", "flag", "collision", "mesh"):
        return _elastic_instance(cfg)
    if cfg.problem in ("wire", "planar"):
        return _geometry_instance(cfg)
    return _deconv_instance(cfg)


def _elastic_instance(cfg):
    from .problems import elastic as el

    plane = None
    if cfg.problem == "mesh":
        for ext in (".node", ".ele"):
            _require_file(cfg.mesh + ext)
        nodes, tets = io.read_tet_mesh(cfg.mesh)
        model = el.make_model(nodes, tets, energy_kind=cfg.material)
        x0 = nodes.ravel().copy()
        x_tilde = x0 + model.dt ** 2 * np.tile([0.0, -9.8, 0.0], len(nodes))
    elif cfg.problem == "bar":
        model, x_tilde, x0 = el.bar_scenario(cfg.material)
    elif cfg.problem == "flag":
        model, x_tilde, x0 = el.flag_scenario(cfg.material)
    else:
        model, x_tilde, x0, plane = el.collision_scenario(cfg.material)
    limits = el.STRAIN_LIMITS if cfg.problem == "flag" else None
    prob = el.build_problem(model, x_tilde, strain_limits=limits, collision_plane=plane)
    x, z, u = el.initial_state_arrays(prob, x_tilde if plane is None else x0)
    faces = el.boundary_faces(model.tets)

    def artifact(state, out):
        path = os.path.join(out, "final.obj")
        io.write_obj(path, state.x.reshape(-1, 3), faces)
        return path

    return Instance(prob, make_state(prob, x, z, u, mu=cfg.mu), 1.0, artifact)


def _geometry_instance(cfg):
    from .problems import geometry as geo

    if cfg.problem == "wire":
        V, faces, cs, _ = geo.wire_mesh_scenario()
    else:
        V, faces, cs = geo.planar_quad_scenario()
    if cfg.mesh:
        _require_file(cfg.mesh)
        V, faces = io.read_obj(cfg.mesh)
        if len(V) != cs.n_vertices:
            raise ValueError(f"{cfg.mesh}: expected {cs.n_vertices} vertices, got {len(V)}")
    prob = geo.build_geometry_problem(V, cs)
    x, z, u = geo.geometry_initial_state_arrays(prob, V.ravel())
    scale = float(np.linalg.norm(np.ptp(V, axis=0)))

    def artifact(state, out):
        path = os.path.join(out, "final.obj")
        io.write_obj(path, state.x.reshape(-1, 3), faces)
        return path

    return Instance(prob, make_state(prob, x, z, u, mu=cfg.mu), scale, artifact)


def _deconv_instance(cfg):
    from .problems import imaging as im

    if cfg.image:
        _require_file(cfg.image)
        observed, _ = io.read_pgm(cfg.image)
        prob = im.build_deconv_problem(observed, im.gaussian_kernel(), cfg.lam1, cfg.lam2)
    else:
        prob, _, observed = im.deconv_scenario(cfg.size, seed=cfg.seed, lam1=cfg.lam1, lam2=cfg.lam2)
    state0 = make_state(prob, np.zeros(prob.n_x), np.zeros(prob.q), None, mu=cfg.mu)

    def artifact(state, out):
        path = os.path.join(out, "final.pgm")
        io.write_pgm(path, state.x.reshape(observed.shape))
        return path

    return Instance(prob, state0, 1.0, artifact)


def resolve_scheme(scheme, problem):
    if scheme == "auto":
        return classify_applicability(problem)["recommended"]
    return "plain_xzu" if scheme == "plain" else scheme


def accel_config(cfg, scheme, scale):
    return AccelConfig(m=cfg.m, max_iters=cfg.max_iters, epsilon=_NO_RAW_STOP, scheme=scheme,
                       alpha=cfg.alpha, rc_tol=cfg.epsilon, scale=scale)


def trace_rows(trace, timing=True):
    return [(r.k, r.wall_time * 1e3 if timing else 0.0, r.R_c, r.R_f, r.accepted)
            for r in trace.rows]


def _solve_one(inst, cfg, scheme):
    state, trace = solve(inst.problem, inst.state0, accel_config(cfg, scheme, inst.scale))
    return state, trace


# -- commands ---------------------------------------------------------------------------

def cmd_run(cfg):
    inst = build_instance(cfg)
    scheme = resolve_scheme(cfg.scheme, inst.problem)
    state, trace = _solve_one(inst, cfg, scheme)
    os.makedirs(cfg.out, exist_ok=True)
    io.write_csv(os.path.join(cfg.out, "trace.csv"), TRACE_HEADER, trace_rows(trace, cfg.timing))
    artifact = inst.artifact(state, cfg.out)
    reached = trace.iterations_to(cfg.epsilon)
    print(f"{scheme}: {len(trace)} steps, R_c={trace.rows[-1].R_c:.3e}, "
          f"{'reached' if reached else 'did not reach'} epsilon={cfg.epsilon:g}; wrote {artifact}")
    return EXIT_OK


def default_variants(problem):
    """Plain ADMM in the recommended order, the recommended scheme with m=6, over-relaxation."""
    rec = classify_applicability(problem)["recommended"]
    plain = "plain_zxu" if rec.endswith(("zxu", "zxu_u")) else "plain_xzu"
    return [(plain, 0), (rec, 6), ("over_relaxed", 0)]


def parse_variants(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        name, _, m = tok.partition(":")
        if name != "auto":
            name = resolve_scheme(name, None)
        default_m = 0 if name in ("plain_xzu", "plain_zxu", "over_relaxed") else 6
        out.append((name, int(m) if m else default_m))
    return out


SUMMARY_HEADER = ("scheme", "m", "status", "steps", "iterations_to_eps", "time_to_eps_ms", "final_R_c")


def cmd_compare(cfg, variants=None):
    inst = build_instance(cfg)
    applicable = classify_applicability(inst.problem)["applicable"]
    variants = default_variants(inst.problem) if not variants else \
        [(resolve_scheme(s, inst.problem), m) for s, m in variants]
    os.makedirs(cfg.out, exist_ok=True)
    summary = []
    for scheme, m in variants:
        if scheme not in SCHEMES or scheme not in applicable:
            summary.append((scheme, m, "not_applicable", 0, "", "", ""))
            continue
        run_cfg = RunConfig(**{**asdict(cfg), "m": m})
        _, trace = _solve_one(inst, run_cfg, scheme)
        tag = f"{scheme}_m{m}"
        io.write_csv(os.path.join(cfg.out, f"trace_{tag}.csv"), TRACE_HEADER,
                     trace_rows(trace, cfg.timing))
        its = trace.iterations_to(cfg.epsilon)
        t = trace.time_to(cfg.epsilon)
        t_ms = "" if t is None else (t * 1e3 if cfg.timing else 0.0)
        summary.append((scheme, m, "ok", len(trace), "" if its is None else its, t_ms,
                        trace.rows[-1].R_c))
    io.write_csv(os.path.join(cfg.out, "summary.csv"), SUMMARY_HEADER, summary)
    print(f"{'scheme':<18}{'m':>3}  {'status':<15}{'iters_to_eps':>13}{'time_to_eps_ms':>16}")
    for scheme, m, status, _, its, t_ms, _ in summary:
        t_txt = f"{t_ms:.2f}" if isinstance(t_ms, float) else "-"
        print(f"{scheme:<18}{m:>3}  {status:<15}{str(its) or '-':>13}{t_txt:>16}")
    return EXIT_OK


def cmd_verify(scheme, mu=None, seed=0, out="out", max_iters=5000):
    from .convergence import construct_verification_problem, verify_shrinkage

    problem, state0, cert = construct_verification_problem(scheme, seed=seed, mu=mu)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "certificate.txt"), "w", encoding="ascii") as fh:
        fh.write(cert.to_text())
    if not cert.certified:
        failed = [k for k, ok in cert.conditions.items() if not ok]
        print(f"{scheme}: not certified at mu={cert.mu:g} (failed: {', '.join(failed) or 'gamma < 1'})")
        return EXIT_UNCERTIFIED
    report = verify_shrinkage(problem, state0, cert, n_iters=max_iters)
    io.write_csv(os.path.join(out, "shrinkage.csv"), ("k", "ratio", "gamma_bound"), report.rows())
    ok = report.passed()
    print(f"{scheme}: mu={cert.mu:g} gamma={cert.gamma:.6f} max_ratio={report.max_ratio:.6f} "
          f"steps={len(report.ratios)} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VIOLATED


# -- argument handling ------------------------------------------------------------------

_OVERRIDES = {"scheme": "scheme", "m": "m", "mu": "mu", "eps": "epsilon",
              "max_iters": "max_iters", "seed": "seed", "out": "out"}


def build_parser():
    parser = argparse.ArgumentParser(prog="aa-admm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--scheme")
        p.add_argument("--m", type=int)
        p.add_argument("--mu", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--max-iters", type=int, dest="max_iters")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--no-timing", action="store_true",
                       help="write wall_ms as 0 so outputs are byte-identical across runs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")

    common(sub.add_parser("run", help="solve one configuration"))
    cp = sub.add_parser("compare", help="solve one instance with several schemes")
    common(cp)
    cp.add_argument("--schemes", help="comma-separated scheme[:m] list")
    vp = sub.add_parser("verify", help="certified shrinkage check")
    vp.add_argument("--scheme", choices=("xzu", "zxu"), required=True)
    vp.add_argument("--mu", type=float)
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--max-iters", type=int, dest="max_iters", default=5000)
    vp.add_argument("--out", metavar="DIR", default="out")
    return parser


def config_from_args(args):
    values = io.read_config(args.config) if args.config else {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = val.strip()
    for flag, key in _OVERRIDES.items():
        val = getattr(args, flag)
        if val is not None:
            values[key] = val
    if args.no_timing:
        values["timing"] = False
    return RunConfig.from_dict(values)


def _apply_thread_limit():
    n = os.environ.get("AA_ADMM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(int(n), 1))


def main(argv=None):
    args = build_parser().parse_args(argv)
    limiter = _apply_thread_limit()
    try:
        if args.command == "verify":
            return cmd_verify(args.scheme, args.mu, args.seed, args.out, args.max_iters)
        cfg = config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        variants = parse_variants(args.schemes) if args.schemes else None
        return cmd_compare(cfg, variants)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, FactorizationError, ProxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
