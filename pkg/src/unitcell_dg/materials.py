"""Constitutive models: dispersion, field-dependent mobility, recombination
and photogeneration, plus the LT-GaAs parameter preset.

Public functions take the units of the parameter table (cm, s, V); the
``*_internal`` helpers return values in the solver units (um, ps).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import constants as const


@dataclass(frozen=True)
class DispersionModel:
    """Relative permittivity model; frequencies in rad/s."""

    kind: str = "none"          # lorentz | drude | none
    eps_inf: float = 1.0
    omega_p: float = 0.0
    omega_o: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lorentz", "drude", "none"):
            raise ValueError(f"unknown dispersion kind {self.kind!r}")
        if self.kind != "none" and (self.omega_p < 0 or self.gamma <= 0):
            raise ValueError("dispersion needs omega_p >= 0 and gamma > 0")
        if self.kind == "lorentz" and self.omega_o <= 0:
            raise ValueError("Lorentz model needs omega_o > 0")

    def static_eps(self, metal_eps: float = 1e3) -> float:
        """Zero-frequency relative permittivity (Drude metals get ``metal_eps``)."""
        if self.kind == "lorentz":
            return self.eps_inf + (self.omega_p / self.omega_o) ** 2
        if self.kind == "drude":
            return metal_eps
        return self.eps_inf


def permittivity(model: DispersionModel, omega) -> np.ndarray:
    """Complex relative permittivity at angular frequency ``omega`` [rad/s].

    Lorentz: eps_inf + wp^2 / (wo^2 - w^2 - i g w);
    Drude: eps_inf - wp^2 / (w^2 + i g w).
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("omega must be positive")
    if model.kind == "lorentz":
        return model.eps_inf + model.omega_p ** 2 / (model.omega_o ** 2 - w ** 2 - 1j * model.gamma * w)
    if model.kind == "drude":
        return model.eps_inf - model.omega_p ** 2 / (w ** 2 + 1j * model.gamma * w)
    return np.full(w.shape, model.eps_inf, dtype=complex)


@dataclass(frozen=True)
class CarrierParams:
    mu0: float        # cm^2/V/s
    vsat: float       # cm/s
    beta: float
    tau: float        # ps
    n1: float         # cm^-3
    auger: float      # cm^6/s


@dataclass(frozen=True)
class MaterialParams:
    """Parameters of one material region."""

    name: str
    dispersion: DispersionModel = field(default_factory=DispersionModel)
    eps_static: float | None = None
    mu_r: float = 1.0
    semiconductor: bool = False
    doping: float = 0.0               # net donor density C, cm^-3
    n_i: float = 1.0                  # cm^-3
    electron: CarrierParams | None = None
    hole: CarrierParams | None = None
    thermal_voltage: float = const.THERMAL_VOLTAGE_300K
    photon_energy_ev: float = 1.55
    eta: float = 1.0

    def __post_init__(self):
        if self.semiconductor:
            for c in (self.electron, self.hole):
                if c is None:
                    raise ValueError(f"{self.name}: semiconductor needs carrier parameters")
                if min(c.mu0, c.vsat, c.tau, c.n1) <= 0 or c.beta < 1:
                    raise ValueError(f"{self.name}: carrier parameters must be positive, beta >= 1")
            if self.n_i <= 0:
                raise ValueError(f"{self.name}: n_i must be positive")

    @property
    def eps_r(self) -> float:
        """Static relative permittivity used by the Poisson solver."""
        if self.eps_static is not None:
            return self.eps_static
        return self.dispersion.static_eps()

    @property
    def eps_optical(self) -> float:
        """Instantaneous (high-frequency) permittivity used by Maxwell."""
        return self.dispersion.eps_inf

    def with_(self, **kw) -> "MaterialParams":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# mobility, recombination, generation

def mobility(mu0, vsat, beta, e_mag):
    """Caughey-Thomas field-dependent mobility [cm^2/V/s]; ``e_mag`` in V/cm."""
    e = np.asarray(e_mag, dtype=float)
    return mu0 / (1.0 + (mu0 * e / vsat) ** beta) ** (1.0 / beta)


def _srh_auger_weight(n_e, n_h, p: MaterialParams, per_ps: bool):
    e, h = p.electron, p.hole
    tscale = 1.0 if per_ps else 1e-12   # lifetimes are tabulated in ps
    denom = (h.tau * (n_e + e.n1) + e.tau * (n_h + h.n1)) * tscale
    ascale = 1e-12 if per_ps else 1.0
    return 1.0 / denom + (e.auger * n_e + h.auger * n_h) * ascale


def recombination(n_e, n_h, params: MaterialParams):
    """Net SRH + Auger recombination rate [cm^-3/s]."""
    n_e = np.asarray(n_e, dtype=float)
    n_h = np.asarray(n_h, dtype=float)
    w = _srh_auger_weight(n_e, n_h, params, per_ps=False)
    return (n_e * n_h - params.n_i ** 2) * w


def recombination_internal(n_e, n_h, params: MaterialParams):
    """Same as :func:`recombination` in cm^-3/ps."""
    return (n_e * n_h - params.n_i ** 2) * _srh_auger_weight(n_e, n_h, params, per_ps=True)


def recombination_weight_internal(n_e, n_h, params: MaterialParams):
    """W with R = (n_e n_h - n_i^2) W, in 1/(cm^-3 ps)."""
    return _srh_auger_weight(n_e, n_h, params, per_ps=True)


def generation(j_pol, model: DispersionModel, params: MaterialParams):
    """Photogeneration rate [cm^-3/s] from the Lorentz polarization current.

    ``j_pol`` is the polarization current density [A/m^2] (components on the
    first axis).  The dissipated power density is the damping work
    ``gamma |J_p|^2 / (eps0 omega_p^2)``, whose cycle average equals
    ``0.5 omega eps0 Im(eps_r) |E|^2``; it is divided by the photon energy
    and scaled by ``eta``.
    """
    if not params.semiconductor:
        raise ValueError(f"generation requested in non-semiconductor region {params.name!r}")
    if model.kind != "lorentz" or model.omega_p == 0:
        return np.zeros(np.shape(j_pol)[1:])
    j2 = np.sum(np.asarray(j_pol, dtype=float) ** 2, axis=0)
    power = model.gamma * j2 / (const.EPS0 * model.omega_p ** 2)        # W/m^3
    photon = params.photon_energy_ev * const.Q_E
    return params.eta * power / photon * 1e-6                          # cm^-3/s


def photon_energy_ev(freq_thz: float) -> float:
    return 2 * np.pi * freq_thz * 1e12 * const.HBAR / const.Q_E


# --------------------------------------------------------------------------
# presets

LTGAAS_LORENTZ = DispersionModel("lorentz", eps_inf=5.785, omega_p=1.061e16,
                                 omega_o=4.783e15, gamma=4.557e14)
GOLD_DRUDE = DispersionModel("drude", eps_inf=1.0, omega_p=1.372e16, gamma=8.052e13)

ELECTRON_LTGAAS = CarrierParams(mu0=8000.0, vsat=1.725e7, beta=1.82, tau=0.3, n1=4.5e6, auger=7e-30)
HOLE_LTGAAS = CarrierParams(mu0=400.0, vsat=0.9e7, beta=1.75, tau=0.4, n1=4.5e6, auger=7e-30)


def ltgaas_reference() -> dict[str, MaterialParams]:
    """LT-GaAs photoconductor stack: absorber, substrate, electrodes, vacuum, PML."""
    pump_ev = photon_energy_ev(375.0)
    return {
        "ltgaas": MaterialParams(
            "ltgaas", dispersion=LTGAAS_LORENTZ, semiconductor=True,
            doping=1.3e16, n_i=9e6, electron=ELECTRON_LTGAAS, hole=HOLE_LTGAAS,
            photon_energy_ev=pump_ev),
        "sigaas": MaterialParams("sigaas", DispersionModel("none", eps_inf=13.26)),
        "gold": MaterialParams("gold", GOLD_DRUDE, eps_static=1e3),
        "vacuum": MaterialParams("vacuum"),
        "pml": MaterialParams("pml"),
    }


PRESETS = {"ltgaas-reference": ltgaas_reference}


def material_preset(name: str) -> dict[str, MaterialParams]:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown material preset {name!r}; have {sorted(PRESETS)}") from None
