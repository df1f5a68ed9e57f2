"""Physical constants in the package unit system.

Frequencies are angular frequencies in rad/us, so 1 MHz corresponds to
``2*pi`` rad/us. Lengths are in nm and times in us.
"""
from dataclasses import dataclass, fields, replace

import numpy as np

MHZ = 2 * np.pi  # rad/us per MHz
KHZ = MHZ * 1e-3


@dataclass(frozen=True)
class PhysicalConstants:
    """Immutable set of constants used throughout the package.

    Attributes
    ----------
    J0 : float
        Dipolar coupling strength, rad/us * nm^3.
    gamma_e, gamma_n : float
        Electron and 14N gyromagnetic ratios, rad/us per gauss.
    Q_quad : float
        14N quadrupole splitting, rad/us.
    A_par_1, A_perp_1 : float
        Hyperfine tensor of a P1 whose axis is along the field, rad/us.
    A_par_2, A_perp_2 : float
        Hyperfine tensor seen by the three off-axis orientations, rad/us.
    D_gs : float
        NV ground-state zero-field splitting, rad/us.
    carbon_density : float
        Number density of carbon sites, nm^-3.
    """

    J0: float = MHZ * 52.0
    gamma_e: float = MHZ * 2.8
    gamma_n: float = KHZ * -0.307
    Q_quad: float = MHZ * -4.95
    A_par_1: float = MHZ * 114.0
    A_perp_1: float = MHZ * 81.0
    A_par_2: float = MHZ * 85.0
    A_perp_2: float = MHZ * 99.0
    D_gs: float = MHZ * 2870.0
    carbon_density: float = 176.5  # 1.765e23 cm^-3

    @classmethod
    def from_mapping(cls, mapping):
        """Build constants with overrides taken from a config table.

        Unknown keys raise ``KeyError`` so that typos are not silently
        ignored.
        """
        names = {f.name for f in fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise KeyError(f"unknown constants: {sorted(unknown)}")
        return replace(cls(), **{k: float(v) for k, v in mapping.items()})


DEFAULT_CONSTANTS = PhysicalConstants()
