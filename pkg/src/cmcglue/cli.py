"""Command-line entry point: ``cmcglue validate | balance | solve | mesh | verify | example-list``.

Exit codes: 0 success, 1 parse error, 2 infeasible geometry, 3 rank
deficient, 4 solver failure.
"""

import os

_threads = os.environ.get("CMCGLUE_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    # must precede the first numpy import to cap BLAS worker threads
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import click  # noqa: E402
import jsonschema  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from . import balance as B  # noqa: E402
from . import config as C  # noqa: E402
from . import surface as S  # noqa: E402
from .errors import (GeometryError, JunctionMismatch, ParseError, RankError,  # noqa: E402
                     SingularJacobian, SolverError)

EXIT_OK, EXIT_PARSE, EXIT_GEOMETRY, EXIT_RANK, EXIT_SOLVER = 0, 1, 2, 3, 4
BALANCE_TOL = 1e-10
FIXTURES = ("single_sphere", "sphere_pair")

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vec, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 2},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": math.pi / 2},
        "example": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": sorted(B.EXAMPLES) + list(FIXTURES)},
                "N": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "theta": _num,
                "k0": {"type": "integer", "minimum": 1},
                "beta": _num,
                "extra_symmetry": {"type": "boolean"},
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["segments", "contacts"],
            "properties": {
                "segments": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["e1", "e2", "arc_length", "N"],
                        "properties": {
                            "e1": _vec, "e2": _vec, "start_angle": _num,
                            "arc_length": {"type": "number", "exclusiveMinimum": 0},
                            "winding": {"type": "integer", "minimum": 0},
                            "N": {"type": "integer", "minimum": 1},
                            "m": {"type": "integer", "minimum": 1},
                        },
                    },
                },
                "contacts": {
                    "type": "array",
                    "items": {"type": "array", "minItems": 3, "maxItems": 3,
                              "prefixItems": [{"type": "integer", "minimum": 0},
                                              {"enum": ["start", "finish"]}, {"type": "string"}]},
                },
            },
        },
        "symmetry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"generators": {"type": "array", "items": _matrix}},
        },
        "omega": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 0},
        "resolution": {"type": "integer", "minimum": 4},
        "tau_sweep": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
        "perturb": {
            "type": "object",
            "additionalProperties": False,
            "required": ["sphere", "size"],
            "properties": {"sphere": {"type": "integer", "minimum": 0}, "size": _num,
                           "direction": {"enum": ["geodesic", "random"]}},
        },
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "oneOf": [{"required": ["example"]}, {"required": ["network", "alpha"]}],
}

DEFAULTS = {"n": 2, "omega": 1.0, "delta": S.DEFAULT_DELTA, "resolution": 32, "output": "out", "seed": 0}


# ---------------------------------------------------------------- configuration

def load_config(path, overrides=None):
    """Read and schema-check a YAML run configuration."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ParseError(f"{path}: {where}{getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        field = "/".join(str(p) for p in e.path) or "<root>"
        raise ParseError(f"{path}: field {field}: {e.message}")
    return {**DEFAULTS, **doc}


def _network(doc):
    net = doc["network"]
    try:
        segs = [C.GeodesicSegment(np.array(s["e1"], float), np.array(s["e2"], float), s.get("start_angle", 0.0),
                                  s["arc_length"], s.get("winding", 0)) for s in net["segments"]]
        network = C.GeodesicNetwork(tuple(segs), tuple(tuple(c) for c in net["contacts"]))
    except ValueError as exc:
        raise ParseError(f"network: {exc}") from None
    dims = {s.dim for s in segs}
    if dims != {doc["n"] + 2}:
        raise ParseError(f"segment vectors must have length n+2 = {doc['n'] + 2}")
    return network


def build(doc):
    """Configuration and symmetry from a checked run document.

    Returns ``(cfg, sym, meta)``; fixtures return a :class:`GlueData` as ``cfg``.
    """
    n = doc["n"]
    if "example" in doc:
        ex = dict(doc["example"])
        kind = ex.pop("kind")
        if "alpha" in doc:
            ex["alpha"] = doc["alpha"]
        if kind == "single_sphere":
            alpha = doc.get("alpha", 0.7)
            c = np.zeros(n + 2)
            c[0] = 1.0
            return S.GlueData(n, alpha, c[None], np.eye(n + 2)[None], ()), None, {"kind": kind, "alpha": alpha}
        if kind == "sphere_pair":
            alpha, tau = doc.get("alpha", 0.5), ex.get("tau", 0.05)
            return S.two_sphere_fixture(n, alpha, tau), None, {"kind": kind, "alpha": alpha, "tau": tau}
        try:
            example = B.build_example(kind, n=n, **ex)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"example {kind}: {exc}") from None
        sym = example.symmetry
        if "symmetry" in doc:
            sym = _symmetry(doc, n)
        return example.config, sym, {"kind": kind, **example.meta}
    net = _network(doc)
    report = C.validate_network(net)
    if not report.ok:
        raise JunctionMismatch(f"invalid network: {json.dumps(_plain(report.as_dict()))}")
    alpha = doc["alpha"]
    taus = [C.solve_closure(seg.arc_length, s.get("m", 1), s["N"], alpha)
            for seg, s in zip(net.segments, doc["network"]["segments"])]
    cfg = C.place_spheres(net, alpha, taus)
    return cfg, _symmetry(doc, n), {"kind": "network", "alpha": alpha, "taus": taus,
                                     "commensurability": C.commensurability_check(net)}


def _symmetry(doc, n):
    gens = doc.get("symmetry", {}).get("generators", [])
    mats = []
    for g in gens:
        m = np.array(g, float)
        if m.shape != (n + 2, n + 2):
            raise ParseError(f"symmetry generators must be {n + 2}x{n + 2} matrices")
        mats.append(m)
    return C.SymmetrySpec(tuple(mats))


def _require_config(cfg, verb):
    if isinstance(cfg, S.GlueData):
        raise ParseError(f"fixtures {FIXTURES} are only accepted by mesh and verify, not {verb}")


# ---------------------------------------------------------------- reports

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def dumps(obj, indent=0):
    """JSON with floats fixed to 17 significant digits and sorted keys."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    return json.dumps(obj)


def text_report(obj, prefix=""):
    lines = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            v = obj[k]
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                lines += text_report(v, key + ".")
            elif isinstance(v, list) and v and isinstance(v[0], (dict, list)):
                lines.append(f"{key}: [{len(v)} entries]")
            elif isinstance(v, list):
                shown = ", ".join(format(x, ".6g") if isinstance(x, float) else str(x) for x in v[:8])
                lines.append(f"{key}: [{shown}{', ...' if len(v) > 8 else ''}]")
            else:
                lines.append(f"{key}: {format(v, '.17g') if isinstance(v, float) else v}")
    return lines


def emit(out, verb, report):
    report = _plain(report)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{verb}.json").write_text(dumps(report) + "\n")
    txt = "\n".join(text_report(report)) + "\n"
    (out / f"{verb}.txt").write_text(txt)
    click.echo(txt, nl=False)


def _exit_code(exc):
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, GeometryError):
        return EXIT_GEOMETRY
    if isinstance(exc, RankError):
        return EXIT_RANK
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return None


def run(verb, fn, target):
    """Run ``fn() -> (code, report)`` translating library errors into exit codes.

    ``target["out"]`` is read after ``fn`` runs since the config may name it.
    """
    try:
        code, report = fn()
    except Exception as exc:  # noqa: BLE001 - mapped below, re-raised if unknown
        code = _exit_code(exc)
        if code is None:
            raise
        report = {"verb": verb, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        try:
            emit(target["out"], verb, report)
        except OSError:
            pass
        sys.exit(code)
    report = {"verb": verb, "exit_code": code, **report}
    emit(target["out"], verb, report)
    sys.exit(code)


# ---------------------------------------------------------------- verbs

def _edge_report(cfg):
    return [{"pair": [i, j], "tau": t} for i, j, t in C.neighbor_graph(cfg)]


def do_validate(doc):
    cfg, sym, meta = build(doc)
    _require_config(cfg, "validate")
    edges = _edge_report(cfg)
    rep = {"valid": True, "n": cfg.n, "alpha": cfg.alpha, "spheres": cfg.size, "taus": list(cfg.taus),
           "counts": list(cfg.counts), "edges": len(edges), "meta": meta}
    if "commensurability" not in meta:
        rep["commensurability"] = C.commensurability_check(cfg.network)
    return EXIT_OK, rep


def balance_analysis(cfg, sym, omega):
    Bv = B.approx_balancing(cfg, omega)
    scale = omega * max(B._neck_scale(cfg.n, cfg.alpha, t, B._c0(cfg.n, None))[0] ** (cfg.n - 1)
                        for _, _, t in C.neighbor_graph(cfg))
    # the analytic Jacobian holds at zero displacement only
    analytic = not np.any(cfg.sigmas)
    J = B.balancing_jacobian(cfg, omega) if analytic else B.fd_jacobian(cfg, omega)
    U = C.projector_basis(C.constraint_projector(cfg, sym))
    Q = B.rotation_induced_fields(cfg, sym)
    Jr = B.restricted_jacobian(J, U)
    Qu = U.T @ Q if Q.size else np.zeros((U.shape[1], 0))
    kr = B.rank_kernel(Jr, rot_fields=Qu)
    deficiency = kr.kernel_dim - Qu.shape[1]
    norm = float(np.linalg.norm(Bv))
    return {
        "jacobian": "analytic" if analytic else "finite_difference",
        "balancing_vector": Bv.ravel(), "balancing_norm": norm, "scale": scale,
        "balanced": norm < BALANCE_TOL * scale,
        "symmetric_dimension": U.shape[1], "rotation_fields": Q.shape[1],
        "singular_values": kr.singular_values, "rank": kr.rank, "kernel_dim": kr.kernel_dim,
        "kernel_basis": (U @ kr.kernel).T, "rotation_containment": kr.containment,
        "deficiency_modulo_rotations": deficiency,
        "full_rank_modulo_rotations": deficiency == 0,
    }


def do_balance(doc):
    cfg, sym, meta = build(doc)
    _require_config(cfg, "balance")
    if "perturb" in doc:
        cfg = perturbed(cfg, doc["perturb"], doc["seed"])
    rep = balance_analysis(cfg, sym, doc["omega"])
    rep["meta"] = meta
    if not rep["balanced"]:
        code = EXIT_SOLVER
    elif not rep["full_rank_modulo_rotations"]:
        code = EXIT_RANK
    else:
        code = EXIT_OK
    return code, rep


def perturbed(cfg, spec, seed):
    i = spec["sphere"]
    if i >= cfg.size:
        raise ParseError(f"perturb.sphere {i} out of range (configuration has {cfg.size} spheres)")
    sig = cfg.sigmas.copy()
    if spec.get("direction", "geodesic") == "geodesic":
        d = cfg.frames[i][1]
    else:
        rng = np.random.default_rng(seed)
        T = cfg.frames[i][1:]
        d = rng.normal(size=T.shape[0]) @ T
        d /= np.linalg.norm(d)
    sig[i] = sig[i] + spec["size"] * d
    return cfg.with_sigmas(sig)


def do_solve(doc):
    cfg, sym, meta = build(doc)
    _require_config(cfg, "solve")
    pre = balance_analysis(cfg, sym, doc["omega"])
    if not pre["full_rank_modulo_rotations"]:
        raise SingularJacobian(f"restricted Jacobian has {pre['deficiency_modulo_rotations']} kernel "
                               "direction(s) beyond the rotation fields")
    if "perturb" in doc:
        cfg = perturbed(cfg, doc["perturb"], doc["seed"])
    res = B.newton_balance(cfg, sym, omega=doc["omega"])
    final = B.approx_balancing(res.config, doc["omega"])
    taus = [t for _, _, t in C.neighbor_graph(res.config)]
    rep = {"newton": res.as_dict(), "sigmas": res.config.sigmas, "final_balancing_norm": float(np.linalg.norm(final)),
           "edge_tau_spread": float(np.ptp(taus)), "meta": meta}
    return EXIT_OK, rep


def _glue_data(cfg):
    return cfg if isinstance(cfg, S.GlueData) else S.GlueData.from_config(cfg)


def do_mesh(doc, out):
    cfg, _, meta = build(doc)
    data = _glue_data(cfg)
    if data.n != 2:
        raise ParseError("mesh export needs n = 2")
    K = doc["resolution"]
    surf = S.assemble_surface(data, (max(K // 2, 4), K))
    rep = S.curvature_error_report(surf, doc["delta"])
    Path(out).mkdir(parents=True, exist_ok=True)
    mesh = S.export_mesh(surf, Path(out) / "mesh.obj")
    return EXIT_OK, {"mesh": {"obj": str(Path(out) / "mesh.obj"), "sidecar": str(Path(out) / "mesh.csv"),
                              "vertices": mesh.vertices.shape[0], "faces": mesh.faces.shape[0],
                              "euler_characteristic": mesh.euler_characteristic},
                     "curvature": rep.as_dict(), "seam_error": surf.seam_error, "meta": meta}


def jacobi_suite(n):
    rows = {}
    for name in S.JACOBI_FIELDS:
        order, vals = S.jacobi_convergence_order(n, name)
        rows[name] = {"order": order, "residuals": [v[0] for v in vals], "spacings": [v[1] for v in vals]}
    rows["Jk"]["growth_rate"] = S.jacobi_growth_rate(n, "Jk")
    rows["J1k"]["growth_rate"] = S.jacobi_growth_rate(n, "J1k")
    rows["J0"]["linear_coefficient"] = S.jacobi_linear_coefficient(n)
    return rows


def do_verify(doc, out):
    cfg, _, meta = build(doc)
    n = cfg.n
    rep = {"jacobi": jacobi_suite(n), "meta": meta}
    if n == 2:
        surf = S.assemble_surface(_glue_data(cfg), (max(doc["resolution"] // 2, 4), doc["resolution"]))
        rep["curvature"] = S.curvature_error_report(surf, doc["delta"]).as_dict()
    sweep = doc.get("tau_sweep")
    if sweep:
        if meta.get("kind") != "delaunay_loop" or n != 2:
            raise ParseError("tau sweep needs the delaunay_loop example with n = 2")
        r = S.error_scaling(sweep, N=meta["N"], delta=doc["delta"])
        rep["tau_sweep"] = {"taus": [row[0] for row in r["rows"]], "eps": [row[1] for row in r["rows"]],
                            "r_eps": [row[2] for row in r["rows"]],
                            "weighted_projected_error": [row[3] for row in r["rows"]],
                            "slope": r["slope"], "target": r["target"], "monotone": r["monotone"]}
    return EXIT_OK, rep


# ---------------------------------------------------------------- click wiring

def _overrides(omega=None, delta=None, resolution=None, seed=None, tau_sweep=None):
    sweep = None
    if tau_sweep:
        try:
            sweep = [float(t) for t in tau_sweep.split(",")]
        except ValueError:
            raise ParseError(f"--tau-sweep expects comma-separated numbers, got {tau_sweep!r}") from None
    return {"omega": omega, "delta": delta, "resolution": resolution, "seed": seed, "tau_sweep": sweep}


def common(f):
    opts = [
        click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False)),
        click.option("--out", "out", default=None, help="output directory"),
        click.option("--tau-sweep", default=None, help="comma-separated tau values"),
        click.option("--delta", type=float, default=None),
        click.option("--omega", type=float, default=None),
        click.option("--resolution", type=int, default=None),
        click.option("--seed", type=int, default=None),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _dispatch(verb, handler, config_path, out, **kw):
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        click.echo(f"error: CMCGLUE_THREADS must be a positive integer, got {_threads!r}", err=True)
        sys.exit(EXIT_PARSE)
    target = {"out": out or DEFAULTS["output"]}

    def go():
        doc = load_config(config_path, _overrides(**kw))
        target["out"] = out or doc["output"]
        if handler in (do_mesh, do_verify):
            return handler(doc, target["out"])
        return handler(doc)
    run(verb, go, target)


@click.group()
def main():
    """Gluing of geodesic hyperspheres by catenoidal necks in S^{n+1}."""


@main.command()
@common
def validate(config_path, out, **kw):
    """Check the network and closure; echo the separations."""
    _dispatch("validate", do_validate, config_path, out, **kw)


@main.command("balance")
@common
def balance_cmd(config_path, out, **kw):
    """Balancing vector, restricted Jacobian spectrum and kernel."""
    _dispatch("balance", do_balance, config_path, out, **kw)


@main.command()
@common
def solve(config_path, out, **kw):
    """Newton iteration for balanced displacements."""
    _dispatch("solve", do_solve, config_path, out, **kw)


@main.command()
@common
def mesh(config_path, out, **kw):
    """Assemble the glued surface and export an OBJ mesh with a CSV sidecar."""
    _dispatch("mesh", do_mesh, config_path, out, **kw)


@main.command()
@common
def verify(config_path, out, **kw):
    """Curvature report, Jacobi residual suite and optional tau sweep."""
    _dispatch("verify", do_verify, config_path, out, **kw)


@main.command("example-list")
def example_list():
    """List the built-in example selectors."""
    rows = {
        "delaunay_loop": "N spheres on one great circle (N, m, tau)",
        "two_geodesics": "two great circles at angle theta (N = 4 N0, theta, extra_symmetry)",
        "frozen_theta": "equator plus two circles at R01(+-k0 step) (N = 4 N0, k0)",
        "tilted": "frozen_theta plus a circle tilted by beta into x3 (N, k0, beta)",
        "single_sphere": "one unperturbed sphere (mesh and verify only)",
        "sphere_pair": "two spheres joined by one neck (mesh and verify only)",
    }
    for k in sorted(rows):
        click.echo(f"{k}: {rows[k]}")


if __name__ == "__main__":
    main()
