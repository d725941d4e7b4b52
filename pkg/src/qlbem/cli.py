"""Batch experiment driver.

Reads a flat ``key = value`` configuration file, runs one of seven named
studies and writes CSV (and VTK) outputs with full provenance headers.

Config grammar
--------------
One statement per line, ``key = value``; ``#`` starts a comment; blank
lines ignored.  A ``[domain N]`` header opens the material section of
domain ``N`` (0 = background) with keys ``epsilon`` and ``mu`` (relative,
parsed as Python complex literals).  Top-level keys:

    experiment      mie | convergence | extinction | iterations |
                    resonance | identity | delta
    geometry        two_cubes | split_sphere | sphere | mesh   (default
                    two_cubes)
    mesh            path to a mesh file when geometry = mesh
    split           half | quadrant (split_sphere only, default half)
    kappa0          background wavenumber [1/m]
    kappa0_start, kappa0_stop, kappa0_count
                    wavenumber sweep (resonance study)
    h               mesh size [m]
    h_list          comma-separated mesh sizes (sweep studies)
    delta           regulariser length scale [m] (default: h)
    delta_list      comma-separated list (delta study)
    cutoff_factor   screened-kernel truncation radius in units of delta
                    (default 3.5)
    screening       gaussian | literal (default gaussian)
    identity_term   true | false (default true)
    gmres_tol       relative residual tolerance (default 2e-5)
    gmres_maxit     iteration cap (default 1000)
    output          output directory (default ".")

Every CSV starts with a ``# config:`` block echoing all parameters plus
the code version and a hash of the canonical config; each data row
repeats the version and hash.  Reruns with identical config and code
version reproduce the files bit-identically, which is why wall-clock
times are reported on stderr rather than stored in the CSVs.
"""

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple


class ConfigError(Exception):
    pass


EXPERIMENTS = ("mie", "convergence", "extinction", "iterations",
               "resonance", "identity", "delta")
GEOMETRIES = ("two_cubes", "split_sphere", "sphere", "mesh")

# fixed quadrature for error/extinction norm matrices: the same (cheap)
# rule is used for every mesh in a sweep, so fitted slopes see a single
# consistent norm
NORM_QUAD = (1, 2, 3, 1.0)


@dataclass
class ExperimentConfig:
    experiment: str
    geometry: str = "two_cubes"
    mesh_path: Optional[str] = None
    split: str = "half"
    kappa0: Optional[float] = None
    sweep: Optional[Tuple[float, float, int]] = None
    domains: Dict[int, Tuple[complex, complex]] = field(default_factory=dict)
    h: Optional[float] = None
    h_list: Optional[List[float]] = None
    delta: Optional[float] = None
    delta_list: Optional[List[float]] = None
    cutoff_factor: float = 3.5
    screening: str = "gaussian"
    identity_term: bool = True
    gmres_tol: float = 2e-5
    gmres_maxit: int = 1000
    output: str = "."


def _parse_scalar(key, value, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse '{value}' as "
                          f"{kind.__name__}")


def _parse_list(key, value):
    items = [s.strip() for s in value.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"key '{key}': empty list")
    return [_parse_scalar(key, s, float) for s in items]


def _parse_bool(key, value):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"key '{key}': expected true/false, got '{value}'")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the flat key = value grammar."""
    top: Dict[str, str] = {}
    domains: Dict[int, Dict[str, str]] = {}
    section: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header")
            parts = line[1:-1].split()
            if len(parts) != 2 or parts[0] != "domain":
                raise ConfigError(f"line {lineno}: expected [domain N]")
            section = _parse_scalar("domain", parts[1], int)
            if section < 0:
                raise ConfigError("key 'domain': index must be >= 0")
            domains.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            if key in top:
                raise ConfigError(f"key '{key}': duplicated")
            top[key] = value
        else:
            if key not in ("epsilon", "mu"):
                raise ConfigError(f"key '{key}': unknown in [domain] "
                                  "section (epsilon, mu)")
            domains[section][key] = value

    if "experiment" not in top:
        raise ConfigError("key 'experiment': required")
    cfg = ExperimentConfig(experiment=top.pop("experiment"))
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"key 'experiment': unknown study "
                          f"'{cfg.experiment}' (choose from "
                          f"{', '.join(EXPERIMENTS)})")

    sweep_keys = {}
    for key, value in top.items():
        if key == "geometry":
            if value not in GEOMETRIES:
                raise ConfigError(f"key 'geometry': unknown '{value}'")
            cfg.geometry = value
        elif key == "mesh":
            cfg.mesh_path = value
        elif key == "split":
            if value not in ("half", "quadrant"):
                raise ConfigError(f"key 'split': unknown '{value}'")
            cfg.split = value
        elif key == "kappa0":
            cfg.kappa0 = _parse_scalar(key, value, float)
        elif key in ("kappa0_start", "kappa0_stop", "kappa0_count"):
            kind = int if key == "kappa0_count" else float
            sweep_keys[key] = _parse_scalar(key, value, kind)
        elif key == "h":
            cfg.h = _parse_scalar(key, value, float)
        elif key == "h_list":
            cfg.h_list = _parse_list(key, value)
        elif key == "delta":
            cfg.delta = _parse_scalar(key, value, float)
        elif key == "delta_list":
            cfg.delta_list = _parse_list(key, value)
        elif key == "cutoff_factor":
            cfg.cutoff_factor = _parse_scalar(key, value, float)
        elif key == "screening":
            if value not in ("gaussian", "literal"):
                raise ConfigError(f"key 'screening': unknown '{value}'")
            cfg.screening = value
        elif key == "identity_term":
            cfg.identity_term = _parse_bool(key, value)
        elif key == "gmres_tol":
            cfg.gmres_tol = _parse_scalar(key, value, float)
        elif key == "gmres_maxit":
            cfg.gmres_maxit = _parse_scalar(key, value, int)
        elif key == "output":
            cfg.output = value
        else:
            raise ConfigError(f"key '{key}': unknown")

    if sweep_keys:
        missing = [k for k in ("kappa0_start", "kappa0_stop", "kappa0_count")
                   if k not in sweep_keys]
        if missing:
            raise ConfigError(f"key '{missing[0]}': required to complete "
                              "the wavenumber sweep")
        cfg.sweep = (sweep_keys["kappa0_start"], sweep_keys["kappa0_stop"],
                     sweep_keys["kappa0_count"])

    for i, sec in sorted(domains.items()):
        eps = complex(1.0)
        mu = complex(1.0)
        if "epsilon" in sec:
            try:
                eps = complex(sec["epsilon"])
            except ValueError:
                raise ConfigError(f"key 'epsilon' (domain {i}): cannot "
                                  f"parse '{sec['epsilon']}' as complex")
        if "mu" in sec:
            try:
                mu = complex(sec["mu"])
            except ValueError:
                raise ConfigError(f"key 'mu' (domain {i}): cannot parse "
                                  f"'{sec['mu']}' as complex")
        cfg.domains[i] = (eps, mu)

    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    for key, value in (("kappa0", cfg.kappa0), ("h", cfg.h),
                       ("delta", cfg.delta),
                       ("cutoff_factor", cfg.cutoff_factor),
                       ("gmres_tol", cfg.gmres_tol)):
        if value is not None and value <= 0:
            raise ConfigError(f"key '{key}': must be positive")
    for key, lst in (("h_list", cfg.h_list), ("delta_list", cfg.delta_list)):
        if lst is not None and any(v <= 0 for v in lst):
            raise ConfigError(f"key '{key}': entries must be positive")
    if cfg.gmres_maxit <= 0:
        raise ConfigError("key 'gmres_maxit': must be positive")
    if cfg.sweep is not None:
        start, stop, count = cfg.sweep
        if start <= 0 or stop <= start:
            raise ConfigError("key 'kappa0_start': sweep requires "
                              "0 < start < stop")
        if count < 2:
            raise ConfigError("key 'kappa0_count': at least 2 points")
    if cfg.geometry == "mesh" and cfg.mesh_path is None:
        raise ConfigError("key 'mesh': required when geometry = mesh")
    for i, (eps, mu) in cfg.domains.items():
        if eps.real <= 0 or mu.real <= 0:
            raise ConfigError(f"key 'epsilon' (domain {i}): real parts "
                              "must be positive")

    needs_kappa0 = cfg.experiment != "resonance"
    if needs_kappa0 and cfg.kappa0 is None:
        raise ConfigError("key 'kappa0': required")
    if cfg.experiment == "resonance" and cfg.sweep is None:
        raise ConfigError("key 'kappa0_start': resonance study requires a "
                          "wavenumber sweep")
    if cfg.experiment in ("convergence", "extinction", "iterations"):
        if not cfg.h_list or len(cfg.h_list) < 2:
            raise ConfigError("key 'h_list': at least two mesh sizes "
                              f"required for the {cfg.experiment} study")
    elif cfg.h is None:
        raise ConfigError("key 'h': required")
    if cfg.experiment == "delta" and not cfg.delta_list:
        raise ConfigError("key 'delta_list': required for the delta study")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}")
    return parse_config(text)


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------

def canonical_config(cfg: ExperimentConfig) -> str:
    """Deterministic serialisation used for the CSV header and hash."""
    lines = []
    simple = [("experiment", cfg.experiment), ("geometry", cfg.geometry),
              ("mesh", cfg.mesh_path), ("split", cfg.split),
              ("kappa0", cfg.kappa0), ("h", cfg.h), ("delta", cfg.delta),
              ("cutoff_factor", cfg.cutoff_factor),
              ("screening", cfg.screening),
              ("identity_term", cfg.identity_term),
              ("gmres_tol", cfg.gmres_tol),
              ("gmres_maxit", cfg.gmres_maxit), ("output", cfg.output)]
    if cfg.sweep is not None:
        simple[5:5] = [("kappa0_start", cfg.sweep[0]),
                       ("kappa0_stop", cfg.sweep[1]),
                       ("kappa0_count", cfg.sweep[2])]
    for key, value in simple:
        if value is not None:
            lines.append(f"{key} = {value}")
    if cfg.h_list:
        lines.append("h_list = " + ", ".join(repr(v) for v in cfg.h_list))
    if cfg.delta_list:
        lines.append("delta_list = "
                     + ", ".join(repr(v) for v in cfg.delta_list))
    for i, (eps, mu) in sorted(cfg.domains.items()):
        lines.append(f"domain {i}: epsilon = {eps}, mu = {mu}")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, complex):
        return f"{value.real:.17g}{value.imag:+.17g}j"
    return str(value)


def write_csv(path: str, cfg: ExperimentConfig, columns: List[str],
              rows: List[List]) -> None:
    from . import __version__
    lines = [f"# config: {line}" for line in canonical_config(cfg).split("\n")]
    lines.append(f"# version: {__version__}")
    lines.append(f"# config_hash: {config_hash(cfg)}")
    lines.append(",".join(columns + ["version", "config_hash"]))
    for row in rows:
        lines.append(",".join([_fmt(v) for v in row]
                              + [__version__, config_hash(cfg)]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Problem setup helpers
# ---------------------------------------------------------------------------

def _build_mesh(cfg: ExperimentConfig, h: float):
    from . import geometry as geo
    if cfg.geometry == "two_cubes":
        return geo.make_two_cubes(h)
    if cfg.geometry == "split_sphere":
        return geo.make_split_sphere(h, split=cfg.split)
    if cfg.geometry == "sphere":
        return geo.make_sphere(h)
    return geo.load_mesh(cfg.mesh_path)


def _mesh_size(mesh) -> float:
    """Actual mesh size: longest triangle edge on the skeleton."""
    import numpy as np
    p = mesh.vertices[mesh.triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
    return float(np.linalg.norm(e, axis=-1).max())


def _materials(cfg: ExperimentConfig, num_domains: int, kappa0: float):
    from .operators import Material
    mats = []
    for i in range(num_domains):
        eps, mu = cfg.domains.get(i, (complex(1.0), complex(1.0)))
        mats.append(Material(eps, mu, kappa0))
    return mats


@dataclass
class _Problem:
    mesh: object
    mt: object
    mats: list
    cal: object
    emb: object
    e_f: object
    h_actual: float


def _setup(cfg: ExperimentConfig, h: float, kappa0: float) -> _Problem:
    from . import formulations as fm
    from . import geometry as geo
    from . import operators as op
    from . import spaces as sps
    mesh = _build_mesh(cfg, h)
    mt = sps.multi_trace(mesh, "RWG")
    mats = _materials(cfg, len(mt.spaces), kappa0)
    cal = fm.assemble_block_calderon(mt, mats)
    emb = sps.build_R(geo.reduce_geometry(mesh), [s.edges for s in mt.spaces])
    e_f = op.planewave_rhs(mt, mats)
    return _Problem(mesh, mt, mats, cal, emb, e_f, _mesh_size(mesh))


def _solve_ql(cfg: ExperimentConfig, prob: _Problem, delta: float,
              identity_term: bool):
    from . import formulations as fm
    from . import krylov as kry
    system = fm.ql_pmchwt(prob.cal, prob.emb, prob.mesh, delta=delta,
                          identity_term=identity_term,
                          cutoff_factor=cfg.cutoff_factor,
                          screening=cfg.screening)
    w, report = kry.gmres(system.apply, system.project_rhs(prob.e_f),
                          tol=cfg.gmres_tol, maxit=cfg.gmres_maxit)
    return system, w, report


def _norm_quad():
    from .operators import QuadratureConfig
    return QuadratureConfig(*NORM_QUAD)


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

def _run_mie(cfg: ExperimentConfig, out: str) -> None:
    import numpy as np
    from . import fields as fl
    if cfg.geometry not in ("split_sphere", "sphere"):
        raise ConfigError("key 'geometry': mie study requires a sphere "
                          "geometry")
    prob = _setup(cfg, cfg.h, cfg.kappa0)
    interior = [prob.mats[i] for i in range(1, len(prob.mats))]
    for m in interior[1:]:
        if (m.epsilon, m.mu) != (interior[0].epsilon, interior[0].mu):
            raise ConfigError("key 'epsilon': mie study requires identical "
                              "materials in all interior domains")
    delta = cfg.delta if cfg.delta is not None else cfg.h
    system, w, report = _solve_ql(cfg, prob, delta, cfg.identity_term)
    u = prob.emb.matrix @ w
    mt = prob.mt
    dirs = fl.eplane_directions(181)
    pat = fl.far_field(mt.spaces[0], u[mt.block(0, "electric")],
                       u[mt.block(0, "magnetic")], prob.mats[0], dirs)
    oracle = fl.mie_rcs(1.0, interior[0], prob.mats[0], dirs)
    theta = np.degrees(np.arccos(np.clip(dirs[:, 2], -1, 1)))
    rows = [[t, s, m, report.iterations, "ok" if report.converged
             else "not_converged"]
            for t, s, m in zip(theta, pat.rcs, oracle.rcs)]
    write_csv(os.path.join(out, "mie.csv"), cfg,
              ["theta_deg", "rcs_solver", "rcs_mie", "iterations",
               "status"], rows)


def _sweep_solutions(cfg: ExperimentConfig, out: str):
    """Solve the QL system for every h in h_list (descending), yielding
    (requested h, problem, system, solution, report) or a failure."""
    results = []
    for h in sorted(cfg.h_list, reverse=True):
        try:
            prob = _setup(cfg, h, cfg.kappa0)
            delta = cfg.delta if cfg.delta is not None else h
            system, w, report = _solve_ql(cfg, prob, delta,
                                          cfg.identity_term)
            results.append((h, prob, system, w, report, None))
        except ConfigError:
            raise
        except Exception as exc:
            print(f"run h={h} failed: {exc}", file=sys.stderr)
            results.append((h, None, None, None, None, "failed"))
    return results


def _run_convergence(cfg: ExperimentConfig, out: str) -> None:
    import numpy as np
    from . import fields as fl
    from . import operators as op
    results = _sweep_solutions(cfg, out)
    ref = results[-1]
    if ref[5] is not None:
        raise RuntimeError("reference (finest) run failed; no error "
                           "measure available")
    _, ref_prob, _, ref_w, _, _ = ref
    u_ref = ref_prob.emb.matrix @ ref_w
    energy = op.assemble_energy(ref_prob.mt, cfg.kappa0, _norm_quad())
    ref_norm = op.energy_norm(energy, u_ref)
    rows = []
    for h, prob, system, w, report, fail in results[:-1]:
        if fail is not None:
            rows.append([h, "", "", "", "", "failed"])
            continue
        u = fl.transfer_traces(prob.mt, prob.emb.matrix @ w, ref_prob.mt)
        err = op.energy_norm(energy, u - u_ref) / ref_norm
        rows.append([h, prob.h_actual, system.dim, report.iterations, err,
                     "ok" if report.converged else "not_converged"])
    write_csv(os.path.join(out, "convergence.csv"), cfg,
              ["h", "h_actual", "dofs", "iterations", "energy_error",
               "status"], rows)


def _run_extinction(cfg: ExperimentConfig, out: str) -> None:
    from . import formulations as fm
    from . import operators as op
    results = _sweep_solutions(cfg, out)
    rows = []
    for h, prob, system, w, report, fail in results:
        if fail is not None:
            rows.append([h, "", "", "", "", "failed"])
            continue
        _, v_g = fm.extinction_residual(system, w, prob.e_f)
        energy = op.assemble_energy(system.dual_space, cfg.kappa0,
                                    _norm_quad())
        err = op.energy_norm(energy, v_g)
        rows.append([h, prob.h_actual, system.dim, report.iterations, err,
                     "ok" if report.converged else "not_converged"])
    write_csv(os.path.join(out, "extinction.csv"), cfg,
              ["h", "h_actual", "dofs", "iterations", "extinction_error",
               "status"], rows)


def _run_iterations(cfg: ExperimentConfig, out: str) -> None:
    from . import formulations as fm
    from . import krylov as kry
    rows = []
    for h in sorted(cfg.h_list, reverse=True):
        try:
            prob = _setup(cfg, h, cfg.kappa0)
            delta = cfg.delta if cfg.delta is not None else h
            system, w, rep_ql = _solve_ql(cfg, prob, delta,
                                          cfg.identity_term)
            classic = fm.classic_pmchwt(prob.cal, prob.emb, prob.e_f)
            # the classic system may need close to dim iterations on
            # fine junction meshes; cap at the dimension, where full
            # GMRES terminates
            cap = max(cfg.gmres_maxit, classic.rhs.size)
            _, rep_cl = kry.gmres(classic.matrix, classic.rhs,
                                  tol=cfg.gmres_tol, maxit=cap,
                                  basis_budget=cap)
            status = "ok" if rep_ql.converged and rep_cl.converged \
                else "not_converged"
            rows.append([h, prob.h_actual, system.dim, rep_cl.iterations,
                         rep_ql.iterations, status])
        except ConfigError:
            raise
        except Exception as exc:
            print(f"run h={h} failed: {exc}", file=sys.stderr)
            rows.append([h, "", "", "", "", "failed"])
    write_csv(os.path.join(out, "iterations.csv"), cfg,
              ["h", "h_actual", "dofs", "it_classic", "it_ql", "status"],
              rows)


def _run_resonance(cfg: ExperimentConfig, out: str) -> None:
    import numpy as np
    from . import formulations as fm
    from . import geometry as geo
    from . import krylov as kry
    from . import operators as op
    from . import spaces as sps
    start, stop, count = cfg.sweep
    kappas = np.linspace(start, stop, count)
    mesh = _build_mesh(cfg, cfg.h)
    mt = sps.multi_trace(mesh, "RWG")
    emb = sps.build_R(geo.reduce_geometry(mesh), [s.edges for s in mt.spaces])
    delta = cfg.delta if cfg.delta is not None else cfg.h
    base_ql = None
    rows = []
    for kappa0 in kappas:
        try:
            mats = _materials(cfg, len(mt.spaces), float(kappa0))
            cal = fm.assemble_block_calderon(mt, mats)
            if base_ql is None:
                # the regulariser and Gram factors are wavenumber
                # independent; assemble them once
                base_ql = fm.ql_pmchwt(cal, emb, mesh, delta=delta,
                                       identity_term=cfg.identity_term,
                                       cutoff_factor=cfg.cutoff_factor,
                                       screening=cfg.screening)
                ql = base_ql
            else:
                ql = fm.ComposedSystem(cal, base_ql.embedding,
                                       base_ql.s_matrix,
                                       base_ql.mixed_solver,
                                       base_ql.reduced_solver,
                                       base_ql.identity_term,
                                       base_ql.dual_space,
                                       base_ql.mixed_gram)
            cond_ql = kry.condition_number(ql.apply, ql.dim)
            classic = fm.classic_pmchwt(cal, emb, np.zeros(cal.dim))
            cal_im = fm.assemble_block_calderon(
                mt, [m.at_imaginary_wavenumber() for m in mats])
            shifted = fm.classic_pmchwt(cal_im, emb, np.zeros(cal.dim))
            pre = np.linalg.solve(shifted.matrix, classic.matrix)
            cond_cl = kry.condition_number(pre, pre.shape[0])
            rows.append([float(kappa0), cond_ql, cond_cl, "ok"])
        except ConfigError:
            raise
        except Exception as exc:
            print(f"run kappa0={kappa0} failed: {exc}", file=sys.stderr)
            rows.append([float(kappa0), "", "", "failed"])
    write_csv(os.path.join(out, "resonance.csv"), cfg,
              ["kappa0", "cond_ql", "cond_classic_preconditioned",
               "status"], rows)


def _run_identity(cfg: ExperimentConfig, out: str) -> None:
    import numpy as np
    from . import fields as fl
    from . import operators as op
    prob = _setup(cfg, cfg.h, cfg.kappa0)
    for i, m in enumerate(prob.mats[1:], 1):
        if (m.epsilon, m.mu) != (prob.mats[0].epsilon, prob.mats[0].mu):
            raise ConfigError(f"key 'epsilon' (domain {i}): identity study "
                              "requires all domains at the background "
                              "material")
    pw = op.PlaneWave(prob.mats[0].kappa, prob.mats[0].eta,
                      np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    u_exact = op.interpolate_cauchy(prob.mt, pw.electric, pw.magnetic)
    w_exact, *_ = np.linalg.lstsq(prob.emb.matrix.toarray(), u_exact,
                                  rcond=None)
    energy = op.assemble_energy(prob.mt, cfg.kappa0, _norm_quad())
    exact_norm = op.energy_norm(energy, u_exact)
    delta = cfg.delta if cfg.delta is not None else cfg.h
    rows = []
    solutions = {}
    for flag in (True, False):
        system, w, report = _solve_ql(cfg, prob, delta, flag)
        err = op.energy_norm(energy,
                             prob.emb.matrix @ (w - w_exact)) / exact_norm
        rows.append([flag, system.dim, report.iterations, err,
                     "ok" if report.converged else "not_converged"])
        solutions[flag] = w
    write_csv(os.path.join(out, "identity_trace_error.csv"), cfg,
              ["identity_term", "dofs", "iterations", "trace_error",
               "status"], rows)

    # line sample through background, large cube and small cube
    ts = np.linspace(-0.5, 2.0, 101)
    pts = np.column_stack([ts, np.full_like(ts, 0.25),
                           np.full_like(ts, 0.25)])
    u = prob.emb.matrix @ solutions[True]
    mt = prob.mt
    cols = ["x", "y", "z"]
    data = [pts[:, 0], pts[:, 1], pts[:, 2]]
    for i in range(len(mt.spaces)):
        smp = fl.stratton_chu(mt.spaces[i], u[mt.block(i, "electric")],
                              u[mt.block(i, "magnetic")], prob.mats[i], pts,
                              incident=pw if i == 0 else None)
        cols.append(f"inside_{i}")
        data.append(smp.inside.astype(int))
        for c, name in enumerate("xyz"):
            cols += [f"e{name}_re_{i}", f"e{name}_im_{i}"]
            data += [smp.e_field[:, c].real, smp.e_field[:, c].imag]
    line_rows = [[col[k] for col in data] for k in range(len(ts))]
    write_csv(os.path.join(out, "identity_line_sample.csv"), cfg, cols,
              line_rows)


def _run_delta(cfg: ExperimentConfig, out: str) -> None:
    rows = []
    prob = _setup(cfg, cfg.h, cfg.kappa0)
    for delta in cfg.delta_list:
        try:
            system, w, report = _solve_ql(cfg, prob, delta,
                                          cfg.identity_term)
            nnz_per_col = system.s_matrix.nnz / system.s_matrix.shape[1]
            rows.append([delta, system.dim, report.iterations, nnz_per_col,
                         "ok" if report.converged else "not_converged"])
        except ConfigError:
            raise
        except Exception as exc:
            print(f"run delta={delta} failed: {exc}", file=sys.stderr)
            rows.append([delta, "", "", "", "failed"])
    write_csv(os.path.join(out, "delta.csv"), cfg,
              ["delta", "dofs", "iterations", "nnz_per_column", "status"],
              rows)


_RUNNERS = {"mie": _run_mie, "convergence": _run_convergence,
            "extinction": _run_extinction, "iterations": _run_iterations,
            "resonance": _run_resonance, "identity": _run_identity,
            "delta": _run_delta}


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> None:
    out = out_dir if out_dir is not None else cfg.output
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    _RUNNERS[cfg.experiment](cfg, out)
    print(f"{cfg.experiment} study finished in {time.time() - t0:.1f} s",
          file=sys.stderr)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _cmd_mesh(args) -> None:
    from . import geometry as geo
    if args.generator == "sphere":
        mesh = geo.make_sphere(args.h)
    elif args.generator == "two_cubes":
        mesh = geo.make_two_cubes(args.h)
    elif args.generator == "split_sphere":
        mesh = geo.make_split_sphere(args.h, split=args.split)
    else:
        raise ConfigError(f"unknown generator '{args.generator}'")
    geo.write_mesh(mesh, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qlbem", description="boundary-element transmission solver "
        "experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configured study")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--out", default=None, help="output directory "
                       "(overrides the config's output key)")
    p_run.add_argument("--threads", type=int, default=None,
                       help="BLAS/OpenMP thread cap")
    p_mesh = sub.add_parser("mesh", help="write a generated mesh to a file")
    p_mesh.add_argument("generator",
                        choices=("sphere", "two_cubes", "split_sphere"))
    p_mesh.add_argument("h", type=float)
    p_mesh.add_argument("--out", required=True)
    p_mesh.add_argument("--split", default="half",
                        choices=("half", "quadrant"))
    args = parser.parse_args(argv)

    if getattr(args, "threads", None) is not None:
        # must happen before numpy/BLAS load, hence the lazy imports
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        if args.command == "run":
            cfg = load_config(args.config)
            run(cfg, args.out)
        else:
            _cmd_mesh(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
