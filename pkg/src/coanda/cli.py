"""Command-line orchestration: config-driven pipelines and artifact emission.

Subcommands: mesh, solve-state, branch, ocp, eigs, rom-offline, rom-online,
verify, export-slices, run. A run consumes one JSON config (or a named
experiment preset) and writes a manifest with config hash and per-file
checksums plus the CSV artifacts consumed by the plotting component.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import numpy as np
from pathlib import Path

from . import __version__, branch as br, fem, ns, ocp, rom, stability
from .errors import ConfigError
from .mesh import build_channel_mesh, export_mesh, locate_output_node

def FLOAT_FMT(v):
    """17 significant digits, lossless round-trip."""
    return repr(float(v))

EXPERIMENT_PRESETS = {
    "uncontrolled": {
        "system": "state",
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["symmetric", "asymmetric", "mirrored"],
        "eigs": {"kinds": ["state"], "k": 20, "subsample": 1},
    },
    "neumann": {
        "system": "ocp",
        "control": {"kind": "neumann", "alpha_list": [1.0, 0.1, 0.01, 0.001],
                    "target": "symmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural", "non-natural"],
    },
    "table-neumann": {
        "system": "ocp",
        "control": {"kind": "neumann", "alpha_list": [1.0, 0.1, 0.01, 0.001],
                    "target": "symmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural", "non-natural"],
        "table_mus": [2.0, 1.5, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
    },
    "distributed-sym": {
        "system": "ocp",
        "control": {"kind": "distributed", "alpha_list": [0.001],
                    "target": "symmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural"],
    },
    "distributed-asym": {
        "system": "ocp",
        "control": {"kind": "distributed", "alpha_list": [0.001],
                    "target": "asymmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural"],
    },
    "channel": {
        "system": "ocp",
        "control": {"kind": "channel", "alpha_list": [1.0, 0.1, 0.01, 0.001],
                    "target": "symmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural"],
    },
    "dirichlet": {
        "system": "ocp",
        "control": {"kind": "dirichlet", "alpha_list": [0.001],
                    "target": "symmetric"},
        "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
        "branches": ["natural"],
    },
}

DEFAULTS = {
    "mesh": "paper",
    "quad_order": 4,
    "system": "state",
    "control": None,
    "mu_grid": {"start": 2.0, "stop": 0.5, "count": 31},
    "branches": ["natural"],
    "seed_mu": 0.95,
    "perturb": 1e-2,
    "tol": 1e-8,
    "eigs": {"k": 100, "shifts": [0.0, 0.005, -0.005], "window": [-0.01, 0.01],
             "metric": None, "sign": -1.0, "kinds": [], "subsample": 1},
    "rom": None,
    "slices": [],
}

KIND_MAP = {"neumann": fem.ControlKind.NEUMANN,
            "distributed": fem.ControlKind.DISTRIBUTED,
            "channel": fem.ControlKind.CHANNEL,
            "dirichlet": fem.ControlKind.DIRICHLET_BC}


def load_config(path_or_name: str) -> dict:
    """Read a JSON config file (or take a preset name) and validate it."""
    if path_or_name in EXPERIMENT_PRESETS:
        raw = {"preset": path_or_name}
    else:
        p = Path(path_or_name)
        if not p.exists():
            raise ConfigError(f"config not found: {path_or_name}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p}: invalid JSON at line "
                              f"{exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    cfg = {k: (json.loads(json.dumps(v)) if v is not None else None)
           for k, v in DEFAULTS.items()}
    preset = raw.get("preset")
    if preset is not None:
        if preset not in EXPERIMENT_PRESETS:
            raise ConfigError(f"unknown experiment preset {preset!r}; "
                              f"choose from {sorted(EXPERIMENT_PRESETS)}")
        _deep_update(cfg, EXPERIMENT_PRESETS[preset])
    _deep_update(cfg, {k: v for k, v in raw.items() if k != "preset"})
    cfg["preset"] = preset

    g = cfg["mu_grid"]
    for key in ("start", "stop", "count"):
        if key not in g:
            raise ConfigError(f"mu_grid missing field {key!r}")
    if g["count"] < 1:
        raise ConfigError("mu_grid.count must be positive (empty grid)")
    if not (g["start"] > 0 and g["stop"] > 0):
        raise ConfigError("viscosities must be positive")
    if cfg["system"] not in ("state", "ocp"):
        raise ConfigError(f"unknown system {cfg['system']!r}")
    if cfg["system"] == "ocp":
        c = cfg["control"]
        if c is None:
            raise ConfigError("ocp runs need a 'control' section")
        if c.get("kind") not in KIND_MAP:
            raise ConfigError(f"unknown control kind {c.get('kind')!r}")
        alphas = c.get("alpha_list") or [c.get("alpha")]
        if not alphas or any(a is None or not (0 < a <= 1) for a in alphas):
            raise ConfigError("control.alpha_list entries must lie in (0,1]")
        c["alpha_list"] = alphas
    return cfg


def _deep_update(base: dict, upd: dict) -> None:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def mu_grid(cfg: dict) -> np.ndarray:
    g = cfg["mu_grid"]
    return np.linspace(g["start"], g["stop"], int(g["count"]))


class ArtifactWriter:
    """Single funnel for output files; records sha256 checksums."""

    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.checksums = {}

    def path(self, name: str) -> Path:
        return self.outdir / name

    def register(self, name: str) -> None:
        p = self.outdir / name
        if p.is_dir():
            for sub in sorted(p.rglob("*")):
                if sub.is_file():
                    self.register(str(sub.relative_to(self.outdir)))
            return
        self.checksums[name] = hashlib.sha256(p.read_bytes()).hexdigest()

    def manifest(self, cfg: dict, extra: dict | None = None) -> None:
        payload = {"config": cfg, "config_hash": config_hash(cfg),
                   "code_version": __version__, "checksums": self.checksums}
        if extra:
            payload.update(extra)
        (self.outdir / "manifest.json").write_text(json.dumps(payload, indent=1))


# -- pipeline pieces ------------------------------------------------------------------

class Pipeline:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.mesh = build_channel_mesh(cfg["mesh"])
        self.space = fem.TaylorHoodSpace(self.mesh, cfg["quad_order"])
        self.tracer = br.BranchTracer(self.space)
        self.stab = stability.StabilityOps(self.space, self.tracer.ip,
                                           self.tracer.state_op)

    def state_branches(self, mus) -> list:
        out = []
        cfgb = self.cfg["branches"]
        if "symmetric" in cfgb or "natural" in cfgb:
            plan = br.ContinuationPlan(mus, "state", label="symmetric")
            out.append(self.tracer.run_continuation(plan))
        if "asymmetric" in cfgb:
            plan = br.ContinuationPlan(mus, "state", perturb=self.cfg["perturb"],
                                       label="asymmetric")
            out.append(self.tracer.run_continuation(plan))
        if "mirrored" in cfgb:
            src = next((b for b in out if b.label == "asymmetric"), None)
            if src is None:
                raise ConfigError("mirrored branch requires an asymmetric branch")
            mirrored = br.Branch("mirrored", "state")
            for e in src.entries:
                if not e.converged:
                    mirrored.entries.append(e)
                    continue
                sol = e.solution
                vm = self.space.mirror_velocity(sol.v)
                pm = self.space.mirror_pressure(sol.p)
                sm = ns.StateSolution(e.mu, vm, pm, e.iters, sol.residual_norm)
                mirrored.entries.append(br.BranchEntry(
                    e.mu, sm, -e.output, None, e.iters, True))
            out.append(mirrored)
        return out

    def ocp_branches(self, mus, alpha: float):
        c = self.cfg["control"]
        config = ocp.OcpConfig(KIND_MAP[c["kind"]], alpha, c.get("target", "symmetric"),
                               c.get("mu_d"))
        branches = []
        natural = None
        if "natural" in self.cfg["branches"]:
            plan = br.ContinuationPlan(mus, "ocp", config,
                                       perturb=self.cfg["perturb"],
                                       tol=self.cfg["tol"],
                                       label=f"natural-a{alpha:g}")
            natural = self.tracer.run_continuation(plan)
            branches.append(natural)
        if "non-natural" in self.cfg["branches"] and natural is not None:
            seed = min(natural.mus(), key=lambda m: abs(m - self.cfg["seed_mu"]))
            entry = natural.entry_at(seed)
            if entry.converged:
                plan = self.tracer.seed_non_natural(natural, seed,
                                                    label=f"non-natural-a{alpha:g}")
                branches.append(self.tracer.run_continuation(plan))
        return branches


def write_costs_csv(branches: list, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("mu,alpha,kind,target,branch_label,J,tracking,penalty,iters,"
                "converged,below_machine_epsilon\n")
        for b in branches:
            cfg = b.config
            for e in b.entries:
                if e.cost is None and e.converged:
                    continue
                cost = e.cost
                fields = [FLOAT_FMT(e.mu), FLOAT_FMT(cfg.alpha), cfg.kind.value,
                          cfg.target, b.label]
                if e.converged:
                    fields += [FLOAT_FMT(cost.J), FLOAT_FMT(cost.tracking),
                               FLOAT_FMT(cost.penalty), str(e.iters), "true",
                               "true" if cost.below_machine_epsilon else "false"]
                else:
                    fields += ["", "", "", str(e.iters), "false", ""]
                f.write(",".join(fields) + "\n")


def cost_manifests(branches: list) -> list:
    out = []
    for b in branches:
        for e in b.entries:
            if e.cost is None:
                continue
            out.append({"mu": e.mu, "alpha": b.config.alpha,
                        "kind": b.config.kind.value, "target": b.config.target,
                        "J": e.cost.J, "tracking": e.cost.tracking,
                        "penalty": e.cost.penalty, "iters": e.iters,
                        "converged": e.converged, "branch_label": b.label})
    return out


# -- subcommand implementations ----------------------------------------------------------

def cmd_mesh(args) -> int:
    cfg = load_config(args.config) if args.config else validate_config({})
    if args.preset:
        cfg["mesh"] = args.preset
    mesh = build_channel_mesh(cfg["mesh"])
    space = fem.TaylorHoodSpace(mesh)
    w = ArtifactWriter(args.out)
    export_mesh(mesh, w.path("mesh.txt"))
    nn = locate_output_node(mesh)
    report = {"cells": mesh.n_cells, "vertices": mesh.n_vertices,
              "edges": space.n_edges,
              "velocity_dofs_per_field": space.n_vel,
              "state_adjoint_velocity_dofs": 2 * space.n_vel,
              "pressure_dofs": space.n_p,
              "output_node": {"index": int(nn.index),
                              "xy": mesh.vertices[nn.index].tolist(),
                              "distance_to_14_4": nn.distance}}
    (w.path("mesh_report.json")).write_text(json.dumps(report, indent=1))
    w.register("mesh.txt")
    w.register("mesh_report.json")
    w.manifest(cfg)
    print(json.dumps(report))
    return 0


def cmd_solve_state(args) -> int:
    cfg = load_config(args.config) if args.config else validate_config({})
    pipe = Pipeline(cfg)
    sol = pipe.tracer.state_op.solve(args.mu)
    w = ArtifactWriter(args.out)
    fem.export_field(sol.velocity(), w.path("velocity.txt"))
    fem.export_field(sol.pressure(), w.path("pressure.txt"))
    out = {"mu": args.mu, "output": pipe.tracer.state_op.output(sol),
           "iters": sol.newton_iters, "residual": sol.residual_norm,
           "reynolds": ns.reynolds(args.mu)}
    w.path("state.json").write_text(json.dumps(out, indent=1))
    for name in ("velocity.txt", "pressure.txt", "state.json"):
        w.register(name)
    w.manifest(cfg)
    print(json.dumps(out))
    return 0


def _alpha_cell_worker(args):
    cfg, alpha = args
    pipe = Pipeline(cfg)
    return pipe.ocp_branches(mu_grid(cfg), alpha)


def _run_branches(pipe: Pipeline, cfg: dict, threads: int = 1):
    mus = mu_grid(cfg)
    if cfg["system"] == "state":
        return pipe.state_branches(mus)
    alphas = cfg["control"]["alpha_list"]
    branches = []
    if threads > 1 and len(alphas) > 1:
        # embarrassingly parallel (alpha, branch) cells, one process each;
        # all artifact writes stay in this process
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(threads, len(alphas))) as ex:
            for cell in ex.map(_alpha_cell_worker, [(cfg, a) for a in alphas]):
                branches.extend(cell)
        return branches
    for a in alphas:
        branches.extend(pipe.ocp_branches(mus, a))
    return branches


def cmd_branch(args) -> int:
    cfg = load_config(args.config)
    pipe = Pipeline(cfg)
    branches = _run_branches(pipe, cfg, args.threads)
    w = ArtifactWriter(args.out)
    br.write_bifurcation_csv(branches, w.path("bifurcation.csv"))
    w.register("bifurcation.csv")
    if cfg["system"] == "ocp":
        write_costs_csv(branches, w.path("costs.csv"))
        w.path("costs.json").write_text(json.dumps(cost_manifests(branches), indent=1))
        w.register("costs.csv")
        w.register("costs.json")
    for b in branches:
        br.save_branch(b, pipe.space, w.path(f"branch_{b.label}"))
        w.register(f"branch_{b.label}")
    w.manifest(cfg)
    print(f"wrote {len(branches)} branch(es) to {w.outdir}")
    return 0


cmd_ocp = cmd_branch  # an ocp run is a branch run with system=ocp


def _eig_rows(pipe: Pipeline, cfg: dict, branches: list):
    e = cfg["eigs"]
    rows = []
    for b in branches:
        for kind in e["kinds"] or (["state"] if cfg["system"] == "state" else ["global"]):
            op = None
            if kind == "global" or cfg["system"] == "ocp":
                op = pipe.tracer.ocp_operator(b.config) if b.config else None
            if kind == "global" and op is None:
                continue
            shifts = list(e["shifts"])
            if op is not None and kind == "global":
                # resolve the optimality cluster; offset so the shifted pencil
                # cannot be exactly singular at the cluster
                shifts.append(0.95 * op.config.alpha)
            rows += stability.spectral_sweep(
                pipe.stab, b, kind, k=e["k"], window=None, shifts=shifts,
                metric=e["metric"], op=op, subsample=int(e.get("subsample", 1)))
    return rows


def _mu_star_from_rows(rows: list):
    """Leading-real-eigenvalue crossing over the swept grid, if any."""
    mus = sorted({r.mu for r in rows})
    lead = []
    for mu in mus:
        re = [r.re for r in rows if r.mu == mu
              and abs(r.im) <= stability.REAL_TOL * max(1.0, abs(r.re))]
        lead.append(max(re) if re else np.nan)
    cp = br.detect_critical_point(mus, lead)
    return cp.mu_star if cp.found else None


def cmd_eigs(args) -> int:
    cfg = load_config(args.config)
    pipe = Pipeline(cfg)
    branches = _run_branches(pipe, cfg, args.threads)
    rows = _eig_rows(pipe, cfg, branches)
    w = ArtifactWriter(args.out)
    stability.write_spectra_csv(rows, w.path("spectra.csv"))
    diag = stability.classify_shears(rows, tuple(cfg["eigs"]["window"]))
    mu_star = _mu_star_from_rows(rows) if cfg["system"] == "state" else None
    stability.write_diagnostics_json(diag, mu_star, w.path("diagnostics.json"))
    w.register("spectra.csv")
    w.register("diagnostics.json")
    w.manifest(cfg)
    print(f"wrote {len(rows)} spectral rows")
    return 0


def _rom_pipeline(pipe: Pipeline, cfg: dict, w: ArtifactWriter, offline_only=False):
    rc = cfg["rom"] or {}
    n_max = int(rc.get("n_max", 51))
    n_bar = int(rc.get("n_bar", 20))
    online_count = int(rc.get("online_count", 151))
    c = cfg["control"]
    alpha = c["alpha_list"][0]
    config = ocp.OcpConfig(KIND_MAP[c["kind"]], alpha, c.get("target", "symmetric"),
                           c.get("mu_d"))
    op = pipe.tracer.ocp_operator(config)
    g = cfg["mu_grid"]
    offline_mus = np.linspace(g["start"], g["stop"], n_max)
    plan = br.ContinuationPlan(offline_mus, "ocp", config, perturb=pipe.cfg["perturb"],
                               label="offline")
    offline = pipe.tracer.run_continuation(plan)
    snaps = rom.collect_snapshots(op, offline)
    rom.save_snapshots(snaps, w.path("snapshots"))
    w.register("snapshots")
    basis = rom.build_aggregated_basis(op, snaps, n_bar,
                                       supremizers=rc.get("supremizers", True))
    n_bar = basis.N
    np.savez(w.path("basis.npz"), Z_v=basis.Z_v, Z_p=basis.Z_p, Z_u=basis.Z_u,
             **({"Z_lt": basis.Z_lt, "Z_lx": basis.Z_lx} if basis.Z_lt is not None else {}))
    w.register("basis.npz")
    if offline_only:
        return None
    rops = rom.project_operators(op, basis)
    online_mus = np.linspace(g["start"], g["stop"], online_count)

    snaps_by_mu = {float(e.mu): e.solution for e in offline.entries if e.converged}
    fe_cache = dict(snaps_by_mu)

    def truth(mu):
        # seeded from the nearest offline snapshot so the truth solve stays
        # on the sampled branch
        mu = float(mu)
        if mu not in fe_cache:
            X, cost, info = op.solve(mu, op.to_vector(_nearest(snaps_by_mu, mu)))
            fe_cache[mu] = X
        return fe_cache[mu]

    n_list = [min(n, n_bar) for n in
              (rc.get("n_sweep") or sorted(set(list(range(2, n_bar + 1, 2)) + [n_bar])))]
    study = rom.error_study(rops, truth, online_mus, n_list)
    rom.write_error_csvs(study, w.path("rom_errors.csv"), w.path("rom_errors_mu.csv"))
    w.register("rom_errors.csv")
    w.register("rom_errors_mu.csv")
    return study


def _nearest(cache: dict, mu: float):
    key = min(cache, key=lambda m: abs(m - mu))
    return cache[key]


def cmd_rom_offline(args) -> int:
    cfg = load_config(args.config)
    if cfg["system"] != "ocp":
        raise ConfigError("rom pipelines need an ocp config")
    pipe = Pipeline(cfg)
    w = ArtifactWriter(args.out)
    _rom_pipeline(pipe, cfg, w, offline_only=True)
    w.manifest(cfg)
    print("offline stage complete")
    return 0


def cmd_rom_online(args) -> int:
    cfg = load_config(args.config)
    pipe = Pipeline(cfg)
    w = ArtifactWriter(args.out)
    _rom_pipeline(pipe, cfg, w, offline_only=False)
    w.manifest(cfg)
    print("rom online study complete")
    return 0


def cmd_run(args) -> int:
    """Full pipeline: mesh -> branches -> eigs -> (rom), one artifact tree."""
    cfg = load_config(args.config)
    pipe = Pipeline(cfg)
    w = ArtifactWriter(args.out)
    export_mesh(pipe.mesh, w.path("mesh.txt"))
    w.register("mesh.txt")
    branches = _run_branches(pipe, cfg, args.threads)
    br.write_bifurcation_csv(branches, w.path("bifurcation.csv"))
    w.register("bifurcation.csv")
    any_complete = any(any(e.converged for e in b.entries) for b in branches)
    if cfg["system"] == "ocp":
        write_costs_csv(branches, w.path("costs.csv"))
        w.path("costs.json").write_text(json.dumps(cost_manifests(branches), indent=1))
        w.register("costs.csv")
        w.register("costs.json")
    for b in branches:
        br.save_branch(b, pipe.space, w.path(f"branch_{b.label}"))
        w.register(f"branch_{b.label}")
    if cfg["eigs"]["kinds"]:
        rows = _eig_rows(pipe, cfg, branches)
        stability.write_spectra_csv(rows, w.path("spectra.csv"))
        w.register("spectra.csv")
        diag = stability.classify_shears(rows, tuple(cfg["eigs"]["window"]))
        stability.write_diagnostics_json(diag, None, w.path("diagnostics.json"))
        w.register("diagnostics.json")
    if cfg.get("rom"):
        _rom_pipeline(pipe, cfg, w)
    for x1 in cfg.get("slices", []):
        b = branches[0]
        last = next((e for e in reversed(b.entries) if e.converged), None)
        if last is not None:
            fields = {"v": fem.Field("velocity", last.solution.v)}
            name = f"slice_x{x1:g}.csv"
            fem.write_slice_csv(pipe.space, fields, x1, w.path(name))
            w.register(name)
    w.manifest(cfg)
    print(f"run complete: {w.outdir}")
    return 0 if any_complete else 3


def cmd_export_slices(args) -> int:
    cfg = load_config(args.config)
    pipe = Pipeline(cfg)
    sol = pipe.tracer.state_op.solve(args.mu)
    w = ArtifactWriter(args.out)
    for x1 in (args.x1 or [47.0, 10.0, 45.0]):
        name = f"slice_x{x1:g}.csv"
        fem.write_slice_csv(pipe.space, {"v": sol.velocity()}, x1, w.path(name))
        w.register(name)
    w.manifest(cfg)
    return 0


def cmd_verify(args) -> int:
    """Offline invariant re-checks from stored artifacts."""
    outdir = Path(args.out)
    man_path = outdir / "manifest.json"
    if not man_path.exists():
        print(f"missing manifest.json in {outdir}", file=sys.stderr)
        return 2
    manifest = json.loads(man_path.read_text())
    failures = []
    checks = []

    for name, digest in manifest.get("checksums", {}).items():
        p = outdir / name
        if not p.exists():
            failures.append(f"missing artifact {name}")
            continue
        actual = hashlib.sha256(p.read_bytes()).hexdigest()
        ok = actual == digest
        checks.append((f"checksum {name}", ok))
        if not ok:
            failures.append(f"checksum mismatch: {name}")

    costs = outdir / "costs.csv"
    if costs.exists():
        import csv as _csv
        with open(costs) as f:
            for row in _csv.DictReader(f):
                if row["converged"] != "true":
                    continue
                J, t, p = (float(row["J"]), float(row["tracking"]),
                           float(row["penalty"]))
                ok = (abs(J - (t + p)) <= 1e-12 * max(1.0, abs(J))
                      and t >= 0 and p >= 0 and J >= t - 1e-15 and J >= p - 1e-15)
                if not ok:
                    failures.append(
                        f"cost identity violated at mu={row['mu']} ({row['branch_label']})")
        checks.append(("cost identity J = tracking + penalty >= parts", costs.exists()))

    basis = outdir / "basis.npz"
    if basis.exists():
        data = np.load(basis)
        cfg = manifest["config"]
        pipe = Pipeline(cfg)
        c = cfg["control"]
        config = ocp.OcpConfig(KIND_MAP[c["kind"]], c["alpha_list"][0],
                               c.get("target", "symmetric"), c.get("mu_d"))
        op = pipe.tracer.ocp_operator(config)
        f = op.free
        Hv = op.ip.H1v[f][:, f]
        G = data["Z_v"].T @ (Hv @ data["Z_v"])
        ok = np.abs(G - np.eye(G.shape[0])).max() < 1e-8
        checks.append(("reduced velocity basis orthonormality", ok))
        if not ok:
            failures.append("reduced basis lost orthonormality")

    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if failures:
        for msg in failures:
            print("FAIL", msg, file=sys.stderr)
        return 1
    print(f"verified {len(checks)} checks")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="coanda",
                                 description="bifurcating channel-flow control toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default="out")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--deterministic", action="store_true",
                       help="force single-threaded, bitwise-reproducible runs")
        for k, v in extra.items():
            p.add_argument(k, **v)
        p.set_defaults(fn=fn)
        return p

    add("mesh", cmd_mesh, **{"--preset": {"default": None}})
    add("solve-state", cmd_solve_state, **{"--mu": {"type": float, "required": True}})
    add("branch", cmd_branch)
    add("ocp", cmd_ocp)
    add("eigs", cmd_eigs)
    add("rom-offline", cmd_rom_offline)
    add("rom-online", cmd_rom_online)
    add("run", cmd_run)
    add("export-slices", cmd_export_slices,
        **{"--mu": {"type": float, "default": 0.5},
           "--x1": {"type": float, "nargs": "*", "default": None}})
    add("verify", cmd_verify)

    args = ap.parse_args(argv)
    if getattr(args, "deterministic", False):
        args.threads = 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
