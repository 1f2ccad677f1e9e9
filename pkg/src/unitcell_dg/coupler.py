"""Multirate Maxwell / drift-diffusion co-simulation.

One macro step advances the carriers by ``dt_dd`` and Maxwell by
``r = dt_dd / dt_em`` LSRK steps.  The conduction current seen by Maxwell
is taken from the carrier state at the start of the macro step (or
linearly extrapolated from the last two, ``exchange = "extrapolate"``);
the DD step sees the optical field and the photogeneration sampled after
``r // 2`` sub-steps.  Maxwell is driven by ``J - J_steady`` because the
steady drift current is balanced by the static field, which is not part
of the optical problem.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants as const
from .dd_steady import Device, SteadyState
from .dd_td import CarrierState, TransientDD
from .materials import generation
from .maxwell_td import EMState, MaxwellSolver, write_vtk

log = logging.getLogger(__name__)

EXCHANGE_POLICIES = ("frozen", "extrapolate")
CSV_COLUMNS = ("t_ps", "Jx_A_per_cm2", "n_total", "em_energy")

# n [cm^-3] * v [um/ps] -> A/cm^2 needs 1e-4 cm / 1e-12 s
_FLUX_TO_CM = 1e8


class CoSimError(ValueError):
    pass


@dataclass
class CoSimConfig:
    """Durations in ps.  ``dt_em = None`` uses the Maxwell CFL limit."""

    T: float
    dt_dd: float | None = None
    dt_em: float | None = None
    ratio: float | None = None
    exchange: str = "frozen"
    observables: tuple[str, ...] = CSV_COLUMNS[1:]
    snapshot_stride: int = 0
    mobility: str = "instantaneous"

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise CoSimError("co-simulation duration T must be positive")
        if self.exchange not in EXCHANGE_POLICIES:
            raise CoSimError(f"exchange policy must be one of {EXCHANGE_POLICIES}")
        for name in ("dt_dd", "dt_em"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise CoSimError(f"{name} must be positive")
        if self.dt_dd is not None and self.dt_em is not None:
            r = self.dt_dd / self.dt_em
            if self.ratio is not None and abs(r - self.ratio) > 1e-9 * r:
                raise CoSimError("ratio disagrees with dt_dd / dt_em")
            self.ratio = r
        if self.ratio is not None:
            self.ratio = rate_ratio(self.ratio)
        bad = set(self.observables) - set(CSV_COLUMNS[1:])
        if bad:
            raise CoSimError(f"unknown observables {sorted(bad)}")
        if self.snapshot_stride < 0:
            raise CoSimError("snapshot stride must be >= 0")

    def resolve(self, dt_em_max: float) -> tuple[float, int]:
        """Concrete ``(dt_em, r)``; fills whichever of the two is missing."""
        r = self.ratio or 10
        if self.dt_em is not None:
            dt_em = self.dt_em
            if dt_em > dt_em_max * (1 + 1e-12):
                log.warning("dt_em %.3g ps exceeds the Maxwell CFL estimate %.3g ps", dt_em, dt_em_max)
        elif self.dt_dd is not None:
            dt_em = self.dt_dd / r
        else:
            dt_em = dt_em_max
        return dt_em, r


def rate_ratio(r: float) -> int:
    """Validate a DD/EM step ratio; must be a positive integer."""
    ri = int(round(r))
    if ri < 1 or abs(r - ri) > 1e-9 * max(1.0, abs(r)):
        raise CoSimError(f"dt_dd / dt_em = {r:g} is not a positive integer")
    return ri


@dataclass
class TimeSeries:
    t: list = field(default_factory=list)
    channels: dict = field(default_factory=lambda: {c: [] for c in CSV_COLUMNS[1:]})

    def append(self, t: float, **values) -> None:
        if self.t and not t > self.t[-1]:
            raise ValueError("time axis must be strictly increasing")
        self.t.append(float(t))
        for k, v in values.items():
            self.channels[k].append(float(v))

    def __len__(self) -> int:
        return len(self.t)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.t if name == "t_ps" else self.channels[name])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i, t in enumerate(self.t):
                w.writerow([repr(t)] + [repr(self.channels[c][i]) for c in CSV_COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        ts = cls()
        with Path(path).open() as fh:
            for row in csv.DictReader(fh):
                ts.append(float(row["t_ps"]), **{c: float(row[c]) for c in CSV_COLUMNS[1:]})
        return ts


def current_density(n_e, n_h, v_e, v_h, d_e=None, d_h=None, grad_e=None, grad_h=None) -> np.ndarray:
    """Nodal conduction current (n, 3) [A/cm^2].

    Densities in cm^-3, velocities (physical, (n, 3)) in um/ps, optional
    diffusivities [um^2/ps] and density gradients [cm^-3/um].  Electrons
    carry charge -q, so J = q (n_h v_h - n_e v_e + d_e grad n_e - d_h grad n_h).
    """
    n_e = np.asarray(n_e, float)[:, None]
    n_h = np.asarray(n_h, float)[:, None]
    J = n_h * np.asarray(v_h, float) - n_e * np.asarray(v_e, float)
    if grad_e is not None:
        J = J + np.asarray(d_e, float)[:, None] * grad_e
    if grad_h is not None:
        J = J - np.asarray(d_h, float)[:, None] * grad_h
    return const.Q_E * _FLUX_TO_CM * J


def photocurrent(ops, n_e, n_h, v_e, v_h, d_e=None, d_h=None, grad_e=None, grad_h=None,
                 component: int = 0) -> float:
    """Volume average of one component of the conduction current [A/cm^2]."""
    J = current_density(n_e, n_h, v_e, v_h, d_e, d_h, grad_e, grad_h)[:, component]
    vol = ops.integrate(np.ones(ops.n_nodes))
    return ops.integrate(J) / vol


class CoSimulation:
    """Holds both solvers and the exchange state; ``run`` produces a TimeSeries."""

    def __init__(self, device: Device, steady: SteadyState, maxwell: MaxwellSolver,
                 cfg: CoSimConfig, bias_field=(0.0, 0.0, 0.0), out_dir=None):
        if not steady.converged:
            raise CoSimError("steady state is not converged")
        if maxwell.mesh is not device.mesh and maxwell.ops.n_nodes != device.ops.n_nodes:
            raise CoSimError("Maxwell and device meshes differ")
        if maxwell.ops.Np != device.ops.Np:
            raise CoSimError("Maxwell and device polynomial orders differ")
        self.device, self.steady, self.maxwell, self.cfg = device, steady, maxwell, cfg
        self.dd = TransientDD(device, steady, cfg.mobility, axes=maxwell.axes, bias_field=bias_field)
        self.semi = device.semi_nodes
        self.dt_em, self.r = cfg.resolve(maxwell.dt_max())
        self.dt_dd = self.dt_em * self.r
        dd_lim = self.dd.max_stable_dt()
        if self.dt_dd > dd_lim:
            log.warning("dt_dd %.3g ps exceeds the explicit DD estimate %.3g ps", self.dt_dd, dd_lim)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._gen_tables()
        self.J_steady = self.current(CarrierState(steady.state.n_e, steady.state.n_h), None)

    def _gen_tables(self) -> None:
        dev = self.device
        names = dev.semi_mesh.region_names
        self._reg = np.repeat(dev.semi_mesh.region, dev.ref.n_nodes)
        self._mats = {r: dev.materials[names[r]] for r in np.unique(self._reg)}

    def current(self, st: CarrierState, E_em) -> np.ndarray:
        v_e, v_h, d_e, d_h = self.dd.transport(E_em)
        ge, gh = self.dd.flux_gradients(st)
        return current_density(st.n_e, st.n_h, v_e, v_h, d_e, d_h, ge, gh)

    def generation(self, u: np.ndarray) -> np.ndarray:
        """Photogeneration [cm^-3/ps] on semiconductor nodes from Jp~."""
        Jp = self.maxwell.field(u, "J")[self.semi] * const.EPS0 * 1e12      # A/m^2
        g = np.zeros(Jp.shape[0])
        for r, m in self._mats.items():
            sel = self._reg == r
            g[sel] = generation(Jp[sel].T, m.dispersion, m) * 1e-12
        return g

    def _jsrc(self, J_cm2: np.ndarray) -> np.ndarray:
        Jfull = np.zeros((self.maxwell.ops.n_nodes, 3))
        Jfull[self.semi] = J_cm2 * 1e4 / const.EPS0 * 1e-12
        return self.maxwell.current_source(Jfull)

    def observe(self, st: CarrierState, em: EMState, E_em) -> dict:
        ops = self.dd.ops
        J = self.current(st, E_em)
        vol = ops.integrate(np.ones(ops.n_nodes))
        return {"Jx_A_per_cm2": ops.integrate(J[:, 0]) / vol,
                "n_total": ops.integrate(st.n_e + st.n_h),
                "em_energy": const.EPS0 * self.maxwell.energy(em.u) * 1e-6 ** self.device.mesh.dim}

    def run(self) -> TimeSeries:
        cfg = self.cfg
        n_macro = int(round(cfg.T / self.dt_dd))
        if abs(n_macro * self.dt_dd - cfg.T) > 1e-9 * cfg.T:
            log.warning("T = %g ps is not a multiple of dt_dd; running %d macro steps", cfg.T, n_macro)
        st = CarrierState(self.steady.state.n_e.copy(), self.steady.state.n_h.copy(), 0.0)
        em = self.maxwell.zero_state()
        E_em = None
        J_prev = None
        ts = TimeSeries()
        half = self.r // 2
        try:
            self._loop(n_macro, half, st, em, E_em, J_prev, ts)
        except FloatingPointError as exc:
            exc.partial = ts
            raise
        return ts

    def _loop(self, n_macro, half, st, em, E_em, J_prev, ts) -> None:
        cfg = self.cfg
        for step in range(1, n_macro + 1):
            J_now = self.current(st, E_em) - self.J_steady
            J_use = J_now if (cfg.exchange == "frozen" or J_prev is None) else 1.5 * J_now - 0.5 * J_prev
            J_prev = J_now
            jsrc = self._jsrc(J_use)
            em = self.maxwell.advance(em, self.dt_em, half, jsrc)
            E_em = self.maxwell.field(em.u, "E")[self.semi] * 1e-6            # V/um
            gen = self.generation(em.u)
            em = self.maxwell.advance(em, self.dt_em, self.r - half, jsrc)
            st = self.dd.step(st, self.dt_dd, E_em, gen)
            obs = self.observe(st, em, E_em)
            ts.append(step * self.dt_dd, **obs)
            self.final = (st, em)
            if self.out_dir is not None and cfg.snapshot_stride and step % cfg.snapshot_stride == 0:
                self.snapshot(step, st, em)

    def snapshot(self, step: int, st: CarrierState, em: EMState) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        mx = self.maxwell
        write_vtk(self.out_dir / f"em_{step:06d}.vtk", mx.ops,
                  {"E": mx.field(em.u, "E"), "H": mx.field(em.u, "H")})
        write_vtk(self.out_dir / f"dd_{step:06d}.vtk", self.dd.ops,
                  {"n_e": st.n_e, "n_h": st.n_h})


def run_transient(device: Device, steady: SteadyState, maxwell: MaxwellSolver, cfg: CoSimConfig,
                  bias_field=(0.0, 0.0, 0.0), out_dir=None) -> TimeSeries:
    return CoSimulation(device, steady, maxwell, cfg, bias_field, out_dir).run()


def beat_frequency(ts: TimeSeries, channel: str = "Jx_A_per_cm2", fmin: float = 0.2,
                   fmax: float = 5.0, t_min: float = 0.0, pad: int = 8) -> float:
    """Spectral peak [THz] of a detrended, Hann-windowed channel."""
    t, y = ts.array("t_ps"), ts.array(channel)
    sel = t >= t_min
    t, y = t[sel], y[sel]
    if t.size < 8:
        raise ValueError("too few samples for a spectrum")
    y = y - np.polyval(np.polyfit(t, y, 1), t)
    y = y * np.hanning(t.size)
    nfft = pad * t.size
    spec = np.abs(np.fft.rfft(y, nfft))
    f = np.fft.rfftfreq(nfft, d=float(np.mean(np.diff(t))))
    band = (f >= fmin) & (f <= fmax)
    return float(f[band][np.argmax(spec[band])])
