"""Command-line front end: ``unitcell-dg steady|transient|mesh-info|plot``.

Exit codes: 0 success, 1 configuration or input error, 2 steady solve not
converged, 3 transient aborted on a non-finite value.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_text
from .coupler import CoSimConfig, CoSimError, CoSimulation
from .dd_steady import Device, GummelState, SteadyState, carrier_transport, gummel_solve
from .linalg import LinearSolverHandle
from .materials import material_preset
from .maxwell_td import MaxwellConfig, MaxwellSolver, PMLSpec, PumpSpec, write_vtk
from .mesh import Mesh, MeshError, StructuredSpec, build_structured, read_mesh

log = logging.getLogger("unitcell_dg")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_NAN = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class InputError(RuntimeError):
    """Missing or inconsistent input artifact."""


# --------------------------------------------------------------------------
# building blocks from a config

def _blocks(text: str, dim: int):
    out = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = [p.strip() for p in item.split(":")]
        if len(parts) != 1 + 2 * dim:
            raise ConfigError("mesh.blocks", f"expected name:{'lo:hi:' * dim}"[:-1] + f", got {item!r}")
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise ConfigError("mesh.blocks", f"bad number in {item!r}") from None
        box = tuple((nums[2 * a], nums[2 * a + 1]) for a in range(dim))
        out.append((box, parts[0]))
    return tuple(out)


def build_mesh(cfg: RunConfig) -> Mesh:
    if cfg["mesh.file"]:
        path = Path(cfg["mesh.file"])
        if not path.is_file():
            raise ConfigError("mesh.file", f"file {str(path)!r} does not exist")
        return read_mesh(path)
    dim = cfg["mesh.dim"]
    if dim == 1:
        extent = (cfg["mesh.x_um"] if cfg["mesh.axis"] == "x" else cfg["mesh.y_um"],)
    else:
        extent = (cfg["mesh.x_um"], cfg["mesh.y_um"])
    layers = []
    for name, upper in cfg["mesh.layers"]:
        try:
            layers.append((float(upper), name))
        except ValueError:
            raise ConfigError("mesh.layers", f"bad upper coordinate {upper!r}") from None
    spec = StructuredSpec(extent=extent, h=cfg["mesh.h_um"], layers=tuple(layers),
                          blocks=_blocks(cfg["mesh.blocks"], dim), stack=cfg["mesh.stack"],
                          region=cfg["mesh.region"])
    try:
        return build_structured(spec)
    except MeshError as exc:
        raise ConfigError("mesh", str(exc)) from None


def build_materials(cfg: RunConfig):
    try:
        mats = material_preset(cfg["materials.preset"])
    except KeyError as exc:
        raise ConfigError("materials.preset", str(exc.args[0])) from None
    for (region, fld), val in cfg.materials.items():
        if region not in mats:
            raise ConfigError(f"materials.{region}.{fld}", f"unknown region; have {sorted(mats)}")
        try:
            mats[region] = mats[region].with_(**{fld: val})
        except ValueError as exc:
            raise ConfigError(f"materials.{region}.{fld}", str(exc)) from None
    return mats


def build_device(cfg: RunConfig, mesh: Mesh | None = None) -> Device:
    mesh = mesh or build_mesh(cfg)
    mats = build_materials(cfg)
    electrodes = {}
    for tag, val in cfg["device.electrodes"]:
        try:
            electrodes[tag] = float(val)
        except ValueError:
            raise ConfigError("device.electrodes", f"bad voltage {val!r} for {tag!r}") from None
    try:
        return Device(mesh, mats, p=cfg["device.p"], v_bias=cfg["device.v_bias_V"],
                      w_sd=cfg["device.w_sd_um"], periodic=cfg["device.periodic"],
                      pdbc=cfg["device.pdbc"], electrodes=electrodes)
    except ValueError as exc:
        raise ConfigError("materials", str(exc)) from None


def solver_handle(cfg: RunConfig) -> LinearSolverHandle:
    return LinearSolverHandle(method=cfg["linear.method"], restart=cfg["linear.restart"],
                              tol=cfg["linear.tol"], max_iter=cfg["linear.max_iter"],
                              preconditioner=cfg["linear.preconditioner"])


def maxwell_axes(cfg: RunConfig, dim: int) -> tuple[int, ...]:
    if dim == 2:
        return (0, 1)
    return (0,) if cfg["mesh.axis"] == "x" else (1,)


def build_maxwell(cfg: RunConfig, device: Device) -> MaxwellSolver:
    boundary = dict(MaxwellConfig().boundary)
    boundary.update(dict(cfg["maxwell.boundary"]))
    pml = None
    if cfg["maxwell.pml"] and "pml" in device.mesh.region_names:
        pml = PMLSpec(order=cfg["maxwell.pml_order"], reflection=cfg["maxwell.pml_reflection"])
    plane = cfg["pump.plane_um"]
    try:
        pump = PumpSpec(f1=cfg["pump.f1_THz"], f2=cfg["pump.f2_THz"],
                        amplitude=cfg["pump.amplitude_V_per_m"], polarization=cfg["pump.polarization"],
                        plane=None if math.isnan(plane) else plane, ramp_cycles=cfg["pump.ramp_cycles"])
    except ValueError as exc:
        raise ConfigError("pump", str(exc)) from None
    try:
        mcfg = MaxwellConfig(p=cfg["device.p"], boundary=boundary, periodic=tuple(device.full_pairings),
                             pml=pml, alpha=cfg["maxwell.flux_alpha"], polarization=cfg["pump.polarization"],
                             cfl=cfg["maxwell.cfl"], axes=maxwell_axes(cfg, device.mesh.dim))
        return MaxwellSolver(device.mesh, device.materials, mcfg, pump=pump, ops=device.ops)
    except ValueError as exc:
        raise ConfigError("maxwell", str(exc)) from None


# --------------------------------------------------------------------------
# steady-state artifacts

def save_steady(path: Path, st: SteadyState) -> None:
    s = st.state
    np.savez(path, phi=s.phi, E=s.E, n_e=s.n_e, n_h=s.n_h, converged=st.converged,
             iterations=st.iterations, phi_drop=st.phi_drop)


def load_steady(path: Path, device: Device) -> SteadyState:
    if path.is_dir():
        path = path / "steady.npz"
    if not path.is_file():
        raise InputError(f"steady state {str(path)!r} not found; run 'unitcell-dg steady' first")
    data = np.load(path)
    if data["phi"].shape[0] != device.ops.n_nodes or data["n_e"].shape[0] != device.semi_ops.n_nodes:
        raise InputError(f"steady state {str(path)!r} does not match the configured mesh")
    E = data["E"]
    gs = GummelState(int(data["iterations"]), data["phi"], E, data["n_e"], data["n_h"])
    v_e, v_h, d_e, d_h = carrier_transport(device, E[device.semi_nodes])
    return SteadyState(device, gs, bool(data["converged"]), int(data["iterations"]), [], 0,
                       float(data["phi_drop"]), v_e, v_h, d_e, d_h)


# --------------------------------------------------------------------------
# commands

def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_steady(args, cfg: RunConfig) -> int:
    device = build_device(cfg)
    t0 = time.perf_counter()
    st = gummel_solve(device, tol=cfg["gummel.tol"], max_iter=cfg["gummel.max_iter"],
                      solver=solver_handle(cfg), relax=cfg["gummel.relax"])
    elapsed = time.perf_counter() - t0
    out = _out_dir(args, cfg)
    st.write_history(out / "convergence.csv")
    save_steady(out / "steady.npz", st)
    if cfg["output.vtk"]:
        write_vtk(out / "steady_fields.vtk", device.ops, {"phi": st.state.phi, "E": st.state.E})
        write_vtk(out / "steady_carriers.vtk", device.semi_ops,
                  {"n_e": st.state.n_e, "n_h": st.state.n_h})
    summary = {
        "converged": st.converged, "iterations": st.iterations, "phi_drop_V": st.phi_drop,
        "v_bias_V": device.v_bias, "w_x_um": device.w_x, "w_sd_um": device.w_sd,
        "clamped": st.clamped, "residuals": st.residuals,
        "n_e_range": [float(st.state.n_e.min()), float(st.state.n_e.max())],
        "n_h_range": [float(st.state.n_h.min()), float(st.state.n_h.max())],
        "runtime_s": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK if st.converged else EXIT_NOT_CONVERGED


def cmd_transient(args, cfg: RunConfig) -> int:
    device = build_device(cfg)
    out = _out_dir(args, cfg)
    steady = load_steady(Path(args.steady) if args.steady else out, device)
    mx = build_maxwell(cfg, device)
    dt_em = cfg["cosim.dt_em_ps"] or None
    try:
        cs = CoSimConfig(T=cfg["cosim.T_ps"], dt_em=dt_em, ratio=cfg["cosim.ratio"],
                         exchange=cfg["cosim.exchange"], snapshot_stride=cfg["cosim.snapshot_stride"],
                         mobility=cfg["mobility.transient"])
    except CoSimError as exc:
        raise ConfigError("cosim.ratio" if "integer" in str(exc) else "cosim", str(exc)) from None
    bias = (0.0, 0.0, 0.0)
    if cfg["cosim.lateral_bias"]:
        bias = (device.v_bias / device.w_sd, 0.0, 0.0)
    try:
        sim = CoSimulation(device, steady, mx, cs, bias_field=bias, out_dir=out / "snapshots")
    except CoSimError as exc:
        raise InputError(str(exc)) from None
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        ts = sim.run()
    except FloatingPointError as exc:
        ts = getattr(exc, "partial", None)
        log.error("transient aborted: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NAN
    if ts is not None:
        ts.to_csv(out / "timeseries.csv")
    summary = {"samples": len(ts) if ts is not None else 0, "dt_em_ps": sim.dt_em, "dt_dd_ps": sim.dt_dd,
               "ratio": sim.r, "T_ps": cs.T, "aborted": code == EXIT_NAN,
               "runtime_s": time.perf_counter() - t0}
    (out / "transient_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return code


def cmd_mesh_info(args, cfg: RunConfig) -> int:
    mesh = build_mesh(cfg)
    tags = {}
    for t in mesh.tags.ravel():
        if t:
            tags[t] = tags.get(t, 0) + 1
    regions = {name: int(np.sum(mesh.region == i)) for i, name in enumerate(mesh.region_names)}
    info = {"dim": mesh.dim, "elements": mesh.n_elements, "vertices": mesh.n_vertices,
            "regions": regions, "boundary_faces": tags, "bounds": mesh.bounds().tolist(),
            "min_edge_um": float(mesh.edge_lengths().min()) if mesh.dim == 2 else float(mesh.volumes().min())}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _read_channel(path: Path, channel: str):
    if not path.is_file():
        raise InputError(f"CSV file {str(path)!r} not found")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"CSV file {str(path)!r} is empty")
    header = rows[0]
    matches = [h for h in header if h == channel] or [h for h in header if h.startswith(channel)]
    if not matches:
        raise InputError(f"channel {channel!r} not in {str(path)!r}; available channels: {header[1:]}")
    col = header.index(matches[0])
    data = np.array([[float(r[0]), float(r[col])] for r in rows[1:]])
    return header[0], matches[0], data.reshape(-1, 2)


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [Path(args.csv)] + [Path(p) for p in (args.overlay or [])]
    fig, ax = plt.subplots(figsize=(6, 4))
    xlabel = ylabel = ""
    for p in paths:
        xlabel, ylabel, data = _read_channel(p, args.channel)
        ax.plot(data[:, 0], data[:, 1], label=p.parent.name or p.stem)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(paths) > 1:
        ax.legend()
    out = Path(args.out) if args.out else paths[0].with_suffix(f".{ylabel}.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    print(str(out))
    return EXIT_OK


# --------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unitcell-dg", description="DG unit-cell photoconductor solver")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="config file or shipped preset name")
            p.add_argument("--dump-effective-config", action="store_true",
                           help="print the fully resolved config and exit")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for numba kernels")

    common(sub.add_parser("steady", help="self-consistent steady state"))
    tr = sub.add_parser("transient", help="coupled Maxwell/drift-diffusion run")
    common(tr)
    tr.add_argument("--steady", help="steady.npz or the directory holding it (default: --out)")
    common(sub.add_parser("mesh-info", help="print mesh statistics"))
    pl = sub.add_parser("plot", help="SVG line plot of a CSV channel")
    pl.add_argument("csv")
    pl.add_argument("--channel", required=True)
    pl.add_argument("--overlay", nargs="*", help="further CSV files drawn on the same axes")
    common(pl, config=False)
    return ap


def _setup_logging() -> None:
    name = os.environ.get("UNITCELL_DG_LOG", "warn").lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if name not in LOG_LEVELS:
        log.warning("UNITCELL_DG_LOG=%r not recognised; using 'warn'", name)


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        if args.command == "plot":
            return cmd_plot(args)
        cfg = load_config(args.config)
        if args.dump_effective_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        return {"steady": cmd_steady, "transient": cmd_transient,
                "mesh-info": cmd_mesh_info}[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


__all__ = ["main", "parse_text", "build_device", "build_mesh", "build_maxwell"]

if __name__ == "__main__":
    sys.exit(main())
