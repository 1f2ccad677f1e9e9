"""Physical constants and the internal unit system.

Internal units: lengths in micrometers, time in picoseconds, potential in
volts, carrier densities in cm^-3.  Electromagnetic fields are carried as
E [V/m] and the impedance-scaled magnetic field H~ = eta0 * H [V/m].
"""

import math

Q_E = 1.602176634e-19          # C
EPS0 = 8.8541878128e-12        # F/m
MU0 = 1.25663706212e-6         # H/m
C0_SI = 299792458.0            # m/s
HBAR = 1.054571817e-34         # J s
K_B = 1.380649e-23             # J/K
ETA0 = math.sqrt(MU0 / EPS0)   # ohm

C0 = C0_SI * 1e6 / 1e12        # um/ps

UM_PER_CM = 1e4
PS_PER_S = 1e12

# q/eps0 in V*um for a density given in um^-3
Q_OVER_EPS0_UM = Q_E / (EPS0 * 1e-6)
CM3_TO_UM3 = 1e-12

# mobility cm^2/(V s) -> um^2/(V ps)
MOBILITY_TO_INTERNAL = 1e8 / 1e12
# diffusion cm^2/s -> um^2/ps
DIFFUSION_TO_INTERNAL = 1e8 / 1e12
# velocity cm/s -> um/ps
VELOCITY_TO_INTERNAL = 1e4 / 1e12
# field V/um -> V/cm
FIELD_TO_V_PER_CM = 1e4

THERMAL_VOLTAGE_300K = 0.02585
