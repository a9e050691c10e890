"""Lab-frame Newtonian simulation of a few ions in a Penning trap."""

from .model import (AxialisationDrive, DipoleProbe, IonState, LaserParams,
                    LinearRates, axialisation_field, continuous_drag_force,
                    coulomb_force, coupling_rate, equilibrium_position, linear_damping_rates,
                    probe_field, scattering_rate, scattering_rates, trap_field)
from .modes import (cyclotron_axial_temperature, mode_amplitudes, mode_radii, mode_state,
                    spectrum_peaks)
from .simulate import (PhotonRecord, Scene, SimConfig, Trajectory, run, step,
                       strictly_increasing)

__all__ = [
    "AxialisationDrive", "DipoleProbe", "IonState", "LaserParams", "LinearRates",
    "PhotonRecord", "Scene", "SimConfig", "Trajectory",
    "axialisation_field", "continuous_drag_force", "coulomb_force",
    "coupling_rate", "equilibrium_position", "cyclotron_axial_temperature", "linear_damping_rates",
    "mode_amplitudes", "mode_radii", "mode_state", "probe_field", "run", "scattering_rate",
    "scattering_rates",
    "spectrum_peaks", "step", "strictly_increasing", "trap_field",
]
