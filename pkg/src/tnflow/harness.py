"""Run orchestration: scenario pipelines, output files, manifests and run comparison.

Each run writes into its own directory:

``manifest.txt``
    ``key: value`` lines with the resolved configuration, package versions,
    wall time per phase, summary metrics, CSV column units and a sha256 for
    every other file in the directory.
``config.ini``
    The fully resolved configuration; feeding it back with the same seed
    repeats the run.
``*.csv`` / ``*.npz`` / ``*.tnfc``
    Tables, field dumps and compiled operators.
"""

from __future__ import annotations

import csv
import hashlib
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, parse_config, render_config, render_value, sponge, wave_physics

MANIFEST = "manifest.txt"
CONFIG_ECHO = "config.ini"


class RunError(RuntimeError):
    """A module error raised inside a scenario, tagged with where it happened."""

    def __init__(self, scenario: str, phase: str, cause: BaseException):
        super().__init__(f"{scenario} [{phase}]: {type(cause).__name__}: {cause}")
        self.scenario, self.phase, self.cause = scenario, phase, cause


class NotConverged(RuntimeError):
    pass


@dataclass
class RunManifest:
    scenario: str
    seed: int
    config: dict  # "section.key" -> (value, provenance)
    versions: dict
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)  # "file:column" -> unit
    files: dict = field(default_factory=dict)  # name -> (sha256, bytes)

    def lines(self) -> list[str]:
        out = ["format: tnflow-manifest 1", f"scenario: {self.scenario}", f"seed: {self.seed}"]
        out += [f"config.{k}: {render_value(v)} [{src}]" for k, (v, src) in self.config.items()]
        out += [f"version.{k}: {v}" for k, v in self.versions.items()]
        out += [f"time.{k}: {v:.3f}" for k, v in self.timings.items()]
        out += [f"metric.{k}: {_fmt(v)}" for k, v in self.metrics.items()]
        out += [f"column.{k}: {v}" for k, v in self.columns.items()]
        out += [f"file.{k}: sha256={h} bytes={n}" for k, (h, n) in sorted(self.files.items())]
        return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_manifest(path) -> dict:
    """Parse ``manifest.txt`` (or a run directory) into a ``key -> text`` dict."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(": ")
            out[key] = value
    return out


class Output:
    """Collects files, column units, timings and metrics for one run."""

    def __init__(self, root, scenario: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.scenario = scenario
        self.timings: dict = {}
        self.metrics: dict = {}
        self.columns: dict = {}
        self.current = "setup"

    @contextmanager
    def phase(self, name: str):
        prev, self.current = self.current, name
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
            self.current = prev

    def csv(self, name: str, columns, rows) -> Path:
        """``columns`` is a list of ``(name, unit)`` pairs."""
        path = self.root / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([c for c, _ in columns])
            for row in rows:
                if len(row) != len(columns):
                    raise ValueError(f"{name}: row has {len(row)} values for {len(columns)} columns")
                w.writerow([_fmt(v) for v in row])
        for c, unit in columns:
            self.columns[f"{name}:{c}"] = unit
        return path

    def npz(self, name: str, **arrays) -> Path:
        path = self.root / name
        with open(path, "wb") as fh:
            np.savez(fh, **{k: np.asarray(v) for k, v in arrays.items()})
        return path

    def blob(self, name: str, data: bytes) -> Path:
        path = self.root / name
        path.write_bytes(data)
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    return {"tnflow": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


# -- shared builders ------------------------------------------------------------

def _state_policy(max_bond, cutoff: float):
    from .core.truncation import TruncationPolicy
    if max_bond is None and cutoff == 0:
        return TruncationPolicy.exact()
    return TruncationPolicy(max_bond=max_bond, cutoff=cutoff)


def make_grid(cfg: RunConfig):
    from .grids import circle_points, cylinder_grid, elliptic_grid, naca0012_points, naca_grid, transfinite_grid
    g = cfg.section("grid")
    if g["geometry"] == "naca0012":
        if g["method"] == "elliptic":
            return naca_grid(g["n_xi"], g["n_eta"], g["outer"], g["smooth_iterations"], g["smooth_tol"])
        count = 1 << g["n_xi"]
        return transfinite_grid(naca0012_points(count), circle_points(g["outer"], count), g["n_xi"], g["n_eta"],
                                geometry=f"naca0012 R={g['outer']:g}")
    grid = cylinder_grid(g["n_xi"], g["n_eta"], g["radius"], g["outer"])
    if g["method"] == "elliptic":
        grid = elliptic_grid(grid, g["smooth_iterations"], g["smooth_tol"])
    return grid


def flow_params(cfg: RunConfig):
    from .flow import FlowParams
    f = cfg.section("flow")
    return FlowParams(rho=f["rho"], nu=f["nu"], u_inf=f["u_inf"], dt=f["dt"])


def _compiled_name(op: str, kappa: int) -> str:
    return f"M1_k{kappa}.tnfc" if op == "M1" else "M2.tnfc"


def _compile(op: str, kappa: int, phys, sp, c: dict, seed: int, time_limit=None):
    from .compile import compile_operator
    from .discrete import build_M1, build_M2
    M = build_M1(phys, sp, kappa) if op == "M1" else build_M2(phys, sp)
    limit = c["time_limit"] if time_limit is None else time_limit
    t0 = time.perf_counter()
    res = compile_operator(M, c["z"], tol=c["tol"], max_iters=c["max_iters"], init=c["init"],
                           method=c["method"], seed=seed, time_limit=limit)
    return res, time.perf_counter() - t0


# -- scenarios ----------------------------------------------------------------

def _wave_mps(cfg: RunConfig, out: Output) -> None:
    from .discrete import build_M1, build_M2, dense_wave_operators
    from .wave import (SourceSpec, dense_wave_evolve, diagonal_indices, energy_norm, evolve,
                       fidelity_inside, local_amplitude_profile, analytic_amplitude)
    from .core import decode_grid
    w = cfg.section("wave")
    with out.phase("operators"):
        phys = wave_physics(cfg)
        sp = sponge(cfg, phys)
        src = SourceSpec.from_physics(phys)
        M1, M2 = build_M1(phys, sp, w["accuracy"]), build_M2(phys, sp)
    out.metrics.update({"bond.M1": M1.max_bond, "bond.M2": M2.max_bond, "cfl": phys.cfl})
    with out.phase("evolve"):
        ws, snaps = evolve(phys, M1, M2, src, w["steps"], _state_policy(w["max_bond"], w["cutoff"]),
                           w["snapshot_every"])
    fields = np.array([decode_grid(s.p_now) for s in snaps])
    times = np.array([s.t for s in snaps])
    steps = np.array([s.k for s in snaps])
    out.metrics["max_bond.state"] = max((s.p_now.max_bond for s in snaps), default=ws.p_now.max_bond)
    out.npz("fields.npz", p=fields, t=times, step=steps)
    energy = energy_norm(fields) if len(fields) else np.zeros(0)
    out.csv("wave_energy.csv", [("step", "1"), ("t", "s"), ("energy", "Pa^2")],
            zip(steps.tolist(), times.tolist(), energy.tolist()))
    if len(fields):
        ix, iy, r = diagonal_indices(phys, src)
        r, amp = local_amplitude_profile(fields, ix, iy, r, discard=len(fields) // 2)
        far = 2 * math.pi * phys.f * r / phys.c >= 3  # the asymptotic form is meaningless closer in
        r, amp = r[far], amp[far]
        out.csv("wave_amplitude.csv", [("r", "m"), ("amplitude", "Pa"), ("analytic", "Pa")],
                zip(r.tolist(), amp.tolist(), analytic_amplitude(r, phys).tolist()))
    if w["oracle"]:
        with out.phase("oracle"):
            ops = dense_wave_operators(phys, sp, w["accuracy"])
            _, ref = dense_wave_evolve(phys, ops, src, w["steps"], snapshot_every=w["snapshot_every"])
        ref = ref[1:]
        out.npz("oracle.npz", p=ref, t=times, step=steps)
        if len(fields):
            out.metrics["max_abs_error"] = float(np.max(np.abs(fields - ref)))
            out.metrics["fidelity_inside.final"] = fidelity_inside(fields[-1], ref[-1], sp.interior_mask(phys))


def _load_or_compile(cfg: RunConfig, out: Output, phys, sp, kappa: int):
    from .compile import dump_compiled, load_compiled
    t = cfg.section("tpvqa")
    res = {}
    for op in ("M1", "M2"):
        name = _compiled_name(op, kappa)
        if t["compiled_dir"] is not None:
            with out.phase("load"):
                res[op] = load_compiled(Path(t["compiled_dir"]) / name)
            if res[op].n != phys.n:
                raise ValueError(f"{name}: compiled for n={res[op].n}, grid has n={phys.n}")
        else:
            with out.phase(f"compile.{op}"):
                res[op], _ = _compile(op, kappa, phys, sp, cfg.section("compile"), cfg.seed)
            dump_compiled(res[op], out.root / name)
        out.metrics[f"epsilon.{op}"] = res[op].epsilon
        out.metrics[f"a_q.{op}"] = res[op].a_q
    return res["M1"], res["M2"]


def _tpvqa_rows(phys, sp, src, kappa, c1, c2, steps, every):
    from .discrete import dense_wave_operators
    from .vqa import run_tpvqa
    from .wave import dense_wave_evolve, fidelity_inside
    run = run_tpvqa(phys, src, c1, c2, steps, diagnostics_every=every, snapshot_every=every)
    _, ref = dense_wave_evolve(phys, dense_wave_operators(phys, sp, kappa), src, steps, snapshot_every=every)
    mask = sp.interior_mask(phys)
    rows = []
    for rec, (k, t, f), r in zip(run.records, run.fields, ref[1:]):
        rows.append((k, t, fidelity_inside(f, r, mask), rec.p_succ_1, rec.p_succ_2, rec.purity_1,
                     rec.purity_2, rec.theta0))
    return rows, run


TPVQA_COLUMNS = [("step", "1"), ("t", "s"), ("fidelity", "1"), ("p_succ_1", "1"), ("p_succ_2", "1"),
                 ("purity_1", "1"), ("purity_2", "1"), ("theta0", "Pa")]


def _wave_tpvqa(cfg: RunConfig, out: Output) -> None:
    from .wave import SourceSpec
    w, t = cfg.section("wave"), cfg.section("tpvqa")
    phys = wave_physics(cfg)
    sp = sponge(cfg, phys)
    src = SourceSpec.from_physics(phys)
    c1, c2 = _load_or_compile(cfg, out, phys, sp, w["accuracy"])
    with out.phase("tpvqa"):
        rows, run = _tpvqa_rows(phys, sp, src, w["accuracy"], c1, c2, t["steps"], t["diagnostics_every"])
    out.csv("tpvqa.csv", TPVQA_COLUMNS, rows)
    out.npz("fields.npz", p=np.array([f for _, _, f in run.fields]),
            t=np.array([tt for _, tt, _ in run.fields]))
    if rows:
        arr = np.array([r[2:7] for r in rows], dtype=float)
        out.metrics["fidelity.final"] = float(arr[-1, 0])
        out.metrics["fidelity.min"] = float(np.nanmin(arr[:, 0]))
        out.metrics["p_succ_1.final"] = float(arr[-1, 1])
        out.metrics["p_succ_2.final"] = float(arr[-1, 2])
        out.metrics["purity.min"] = float(np.nanmin(arr[:, 3:5]))


def _mpo_compile(cfg: RunConfig, out: Output) -> None:
    from .compile import dump_compiled
    c = cfg.section("compile")
    phys = wave_physics(cfg)
    sp = sponge(cfg, phys)
    jobs = []
    for op in c["operators"]:
        jobs.extend((op, k) for k in (c["accuracies"] if op == "M1" else (0,)))
    rows, hist, failed = [], [], []
    for op, k in jobs:
        tag = op if op == "M2" else f"M1_k{k}"
        with out.phase(f"compile.{tag}"):
            res, secs = _compile(op, k, phys, sp, c, cfg.seed)
        dump_compiled(res, out.root / _compiled_name(op, k))
        rows.append((op, k, res.epsilon, res.a_q, len(res.history) - 1, secs, res.converged))
        hist.extend((op, k, i, e) for i, e in enumerate(res.history))
        out.metrics[f"epsilon.{tag}"] = res.epsilon
        out.metrics[f"a_q.{tag}"] = res.a_q
        if not res.converged:
            failed.append(tag)
    out.csv("compile.csv", [("operator", "-"), ("kappa", "1"), ("epsilon", "1"), ("a_q", "1"),
                            ("iterations", "1"), ("seconds", "s"), ("converged", "bool")], rows)
    out.csv("compile_history.csv", [("operator", "-"), ("kappa", "1"), ("iteration", "1"), ("epsilon", "1")], hist)
    if failed:
        raise NotConverged(f"compile tolerance {c['tol']:g} not reached for {', '.join(failed)}")


def _grid_gen(cfg: RunConfig, out: Output) -> None:
    from .curvilinear import build_curvilinear_operators
    from .grids import control_functions, min_spacing, orthogonality_deviation, winslow_residual
    with out.phase("grid"):
        grid = make_grid(cfg)
    X, Y = grid.coords()
    from .core import decode_grid
    out.npz("grid.npz", x=X, y=Y, jac=decode_grid(grid.jac))
    out.metrics.update({"chi_met": grid.chi_met, "min_spacing": min_spacing(grid),
                        "orthogonality_deviation": orthogonality_deviation(grid),
                        "winslow_residual": winslow_residual(X, Y, control_functions(X, Y))})
    with out.phase("operators"):
        ops = build_curvilinear_operators(grid)
    for k, v in ops.bonds().items():
        out.metrics[f"bond.{k}"] = v
    out.csv("grid_wall.csv", [("i_xi", "1"), ("x", "m"), ("y", "m")],
            ((i, X[0, i], Y[0, i]) for i in range(X.shape[1])))


FLOW_ERROR_COLUMNS = [("step", "1"), ("t", "s"), ("eps_p", "1"), ("eps_speed", "1")]


def _flow_run(cfg: RunConfig, grid, max_bond, steps: int, oracle: bool):
    """Shared by the ns-cylinder scenario and the bench jobs."""
    from .flow import (PoissonConfig, SteadyDetector, build_flow_problem, cp_profile, horizontal_force,
                       horizontal_force_from_wall, far_pressure, pressure_coefficient, relative_error_series,
                       run_flow)
    from .flow_dense import dense_flow_for
    f, pc = cfg.section("flow"), cfg.section("poisson")
    timings = {}
    t0 = time.perf_counter()
    problem = build_flow_problem(grid, flow_params(cfg))
    timings["operators"] = time.perf_counter() - t0
    pb = pc["max_bond"] if pc["max_bond"] is not None else max_bond
    pcfg = PoissonConfig(max_bond=pb, tol=pc["tol"], sweeps=pc["sweeps"], patience=pc["patience"],
                         strict=max_bond is None)
    steady = SteadyDetector(f["steady_tol"], f["steady_count"]) if f["steady_tol"] else None
    t0 = time.perf_counter()
    fs, infos, samples = run_flow(problem, steps, _state_policy(max_bond, 0.0 if max_bond is None else 1e-14),
                                  pcfg, sample_every=f["sample_every"], steady=steady)
    timings["evolve"] = time.perf_counter() - t0
    theta, cp = cp_profile(fs, grid, problem.params)
    res = {"problem": problem, "state": fs, "infos": infos, "samples": samples, "theta": theta, "cp": cp,
           "force": horizontal_force(fs, grid), "timings": timings}
    if oracle:
        t0 = time.perf_counter()
        dense = dense_flow_for(grid, problem.params)
        ds, ref = dense.run(fs.step, sample_every=f["sample_every"])
        timings["oracle"] = time.perf_counter() - t0
        p = ds.p.reshape(dense.shape)
        pw, pinf = dense.wall_pressure(ds), far_pressure(p)
        res["errors"] = relative_error_series(samples, ref)
        res["cp_dense"] = pressure_coefficient(p, problem.params, pinf)
        res["force_dense"] = horizontal_force_from_wall(pw, pinf, grid)
        res["dense_state"] = ds
    return res


def _ns_cylinder(cfg: RunConfig, out: Output) -> None:
    f = cfg.section("flow")
    with out.phase("grid"):
        grid = make_grid(cfg)
    res = _flow_run(cfg, grid, f["max_bond"], f["steps"], f["oracle"])
    for k, v in res["timings"].items():
        out.timings[k] = out.timings.get(k, 0.0) + v
    fs, infos = res["state"], res["infos"]
    out.metrics.update({"steps": fs.step, "t": fs.t, "dt": res["problem"].dt, "force": res["force"],
                        "divergence.max": max(i.divergence for i in infos),
                        "poisson_residual.max": max(i.poisson_residual for i in infos)})
    out.csv("flow_steps.csv", [("step", "1"), ("poisson_residual", "1"), ("poisson_sweeps", "1"),
                               ("divergence", "1")],
            ((k + 1, i.poisson_residual, i.poisson_sweeps, i.divergence) for k, i in enumerate(infos)))
    dumps = fs.fields()
    cp_cols = [("theta", "deg"), ("cp", "1")]
    cp_rows = [list(r) for r in zip(res["theta"].tolist(), res["cp"].tolist())]
    if "errors" in res:
        e = res["errors"]
        out.csv("flow_errors.csv", FLOW_ERROR_COLUMNS,
                ((s["step"], s["t"], ep, es) for s, ep, es in zip(res["samples"], e["p"], e["speed"])))
        out.metrics["force_dense"] = res["force_dense"]
        if len(e["speed"]):
            out.metrics["eps_speed.final"] = float(e["speed"][-1])
            out.metrics["eps_p.final"] = float(e["p"][-1])
        ds = res["dense_state"]
        dumps.update({f"{k}_dense": v for k, v in ds.fields().items()})
        dumps = {k: (v.reshape(grid.shape) if v.ndim == 1 else v) for k, v in dumps.items()}
        cp_cols.append(("cp_dense", "1"))
        for row, c in zip(cp_rows, res["cp_dense"].tolist()):
            row.append(c)
    out.csv("cp.csv", cp_cols, cp_rows)
    out.npz("flow.npz", **dumps)


# -- bench ----------------------------------------------------------------------

def _bench_tpvqa(cfg: RunConfig, kappa: int) -> dict:
    from .wave import SourceSpec
    b = cfg.section("bench")
    phys = replace(wave_physics(cfg), n_x=b["wave_n"], n_y=b["wave_n"], L=None)
    sp = sponge(cfg, phys)
    src = SourceSpec.from_physics(phys)
    comp = cfg.section("compile")
    c1, _ = _compile("M1", kappa, phys, sp, comp, cfg.seed, b["compile_time_limit"])
    c2, _ = _compile("M2", kappa, phys, sp, comp, cfg.seed, b["compile_time_limit"])
    rows, _ = _tpvqa_rows(phys, sp, src, kappa, c1, c2, b["tpvqa_steps"], cfg.get("tpvqa.diagnostics_every"))
    return {"kappa": kappa, "rows": rows, "epsilon": (c1.epsilon, c2.epsilon)}


def _bench_flow(cfg: RunConfig, chi) -> dict:
    from .grids import cylinder_grid
    b, g = cfg.section("bench"), cfg.section("grid")
    grid = cylinder_grid(b["flow_n"], b["flow_n"], g["radius"], g["outer"])
    res = _flow_run(cfg, grid, chi, b["flow_steps"], True)
    return {"chi": chi, "samples": [(s["step"], s["t"]) for s in res["samples"]], "errors": res["errors"],
            "theta": res["theta"], "cp": res["cp"], "cp_dense": res["cp_dense"]}


def _bench_job(job):
    kind, cfg, arg = job
    return _bench_tpvqa(cfg, arg) if kind == "tpvqa" else _bench_flow(cfg, arg)


def _bench(cfg: RunConfig, out: Output, workers: int = 1) -> None:
    b = cfg.section("bench")
    jobs = [("tpvqa", cfg, k) for k in b["tpvqa_accuracies"]]
    jobs += [("flow", cfg, chi) for chi in b["flow_bonds"]]
    with out.phase("jobs"):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_bench_job, jobs))
        else:
            results = [_bench_job(j) for j in jobs]
    tp = [r for r in results if "kappa" in r]
    fl = [r for r in results if "chi" in r]
    out.csv("fidelity.csv", [("kappa", "1"), ("step", "1"), ("t", "s"), ("fidelity", "1")],
            ((r["kappa"], *row[:3]) for r in tp for row in r["rows"]))
    out.csv("p_succ.csv", [("kappa", "1"), ("step", "1"), ("t", "s"), ("p_succ_1", "1"), ("p_succ_2", "1")],
            ((r["kappa"], row[0], row[1], row[3], row[4]) for r in tp for row in r["rows"]))
    out.csv("purity.csv", [("kappa", "1"), ("step", "1"), ("t", "s"), ("purity_1", "1"), ("purity_2", "1")],
            ((r["kappa"], row[0], row[1], row[5], row[6]) for r in tp for row in r["rows"]))
    out.csv("eps_mu.csv", [("chi", "1"), ("step", "1"), ("t", "s"), ("eps_p", "1"), ("eps_speed", "1")],
            ((r["chi"], s, t, ep, es) for r in fl
             for (s, t), ep, es in zip(r["samples"], r["errors"]["p"], r["errors"]["speed"])))
    cp_rows = []
    for r in fl:
        cp_rows.extend((f"chi={r['chi']}", th, c) for th, c in zip(r["theta"].tolist(), r["cp"].tolist()))
    if fl:
        cp_rows.extend(("dense", th, c) for th, c in zip(fl[0]["theta"].tolist(), fl[0]["cp_dense"].tolist()))
    out.csv("cp.csv", [("run", "-"), ("theta", "deg"), ("cp", "1")], cp_rows)
    for r in tp:
        out.metrics[f"epsilon.M1_k{r['kappa']}"], out.metrics[f"epsilon.M2_k{r['kappa']}"] = r["epsilon"]
        if r["rows"]:
            out.metrics[f"fidelity.final.k{r['kappa']}"] = r["rows"][-1][2]
    for r in fl:
        if len(r["errors"]["speed"]):
            out.metrics[f"eps_speed.final.chi{r['chi']}"] = float(r["errors"]["speed"][-1])


SCENARIO_RUNNERS = {
    "wave-mps": _wave_mps,
    "wave-tpvqa": _wave_tpvqa,
    "mpo-compile": _mpo_compile,
    "ns-cylinder": _ns_cylinder,
    "grid-gen": _grid_gen,
}


def run(cfg: RunConfig, out_dir, workers: int = 1) -> RunManifest:
    """Execute ``cfg`` and write all outputs and the manifest into ``out_dir``.

    Errors raised by the pipelines come back wrapped in :class:`RunError`;
    the manifest is still written (with the metrics gathered so far).
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    np.random.seed(cfg.seed % (1 << 32))
    out = Output(out_dir, cfg.scenario)
    (out.root / CONFIG_ECHO).write_text(render_config(cfg, include_defaults=True))
    failure = None
    try:
        if cfg.scenario == "bench":
            _bench(cfg, out, workers)
        else:
            SCENARIO_RUNNERS[cfg.scenario](cfg, out)
    except Exception as exc:  # reported with context below
        failure = RunError(cfg.scenario, out.current, exc)
        out.metrics["failure"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    manifest = RunManifest(cfg.scenario, cfg.seed,
                           {k: (v, cfg.provenance(k)) for k, v in cfg.items()}, versions(),
                           out.timings, out.metrics, out.columns)
    for p in sorted(out.root.iterdir()):
        if p.is_file() and p.name != MANIFEST:
            manifest.files[p.name] = (_sha256(p), p.stat().st_size)
    (out.root / MANIFEST).write_text("\n".join(manifest.lines()) + "\n")
    if failure is not None:
        raise failure from failure.cause
    return manifest


def load_run_config(run_dir, seed: int | None = None) -> RunConfig:
    """The configuration a finished run used, ready to be run again."""
    m = read_manifest(run_dir)
    text = (Path(run_dir) / CONFIG_ECHO).read_text()
    return parse_config(text, m["scenario"], int(m["seed"]) if seed is None else seed)


# -- comparison ---------------------------------------------------------------

@dataclass
class CompareReport:
    metric: str
    fields: dict  # "file:array" -> norm of the difference
    scalars: dict  # metric name -> absolute difference
    missing: list

    def lines(self) -> list[str]:
        out = [f"field.{k}: {_fmt(v)}" for k, v in self.fields.items()]
        out += [f"metric.{k}: {_fmt(v)}" for k, v in self.scalars.items()]
        out += [f"missing: {k}" for k in self.missing]
        return out

    @property
    def max(self) -> float:
        vals = list(self.fields.values()) + list(self.scalars.values())
        return max(vals, default=0.0)


def _arrays(run_dir) -> dict:
    out = {}
    for p in sorted(Path(run_dir).glob("*.npz")):
        with np.load(p) as data:
            out.update({f"{p.name}:{k}": data[k] for k in data.files})
    return out


def compare(run_a, run_b, metric: str = "relative") -> CompareReport:
    """Difference norms between the field dumps (and numeric metrics) of two runs.

    ``metric`` is ``"relative"`` (``|a - b| / |b|``, Frobenius) or ``"max"``
    (largest absolute entry of ``a - b``).
    """
    if metric not in ("relative", "max"):
        raise ValueError("metric must be 'relative' or 'max'")
    fa, fb = _arrays(run_a), _arrays(run_b)
    fields, missing = {}, sorted(set(fa) ^ set(fb))
    for k in sorted(set(fa) & set(fb)):
        a, b = fa[k].astype(float), fb[k].astype(float)
        if a.shape != b.shape:
            missing.append(f"{k} (shape {a.shape} vs {b.shape})")
            continue
        d = a - b
        if metric == "max":
            fields[k] = float(np.max(np.abs(d))) if d.size else 0.0
        else:
            nb = float(np.linalg.norm(b))
            fields[k] = float(np.linalg.norm(d)) / nb if nb > 0 else float(np.linalg.norm(d))
    ma, mb = read_manifest(run_a), read_manifest(run_b)
    scalars = {}
    for k in sorted(set(ma) & set(mb)):
        if not k.startswith("metric."):
            continue
        try:
            x, y = float(ma[k]), float(mb[k])
        except ValueError:
            continue
        if math.isnan(x) and math.isnan(y):
            scalars[k[7:]] = 0.0
        else:
            scalars[k[7:]] = abs(x - y)
    return CompareReport(metric, fields, scalars, missing)
