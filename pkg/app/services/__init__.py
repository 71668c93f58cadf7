# FNG toolkit services
from app.services.cnoidal_service import charges, solve_ring, solve_ring_branches, thermo_derivatives
from app.services.ces_service import run_quench, scan_phase_diagram, fit_critical_exponent
from app.services.modes_service import bogoliubov_spectrum, goldstone_gibbs_modes, floquet_propagate
from app.services.run_io_service import parse_config, write_outputs, verify_manifest
from app.services.spectral_service import Grid1D, split_step, imaginary_time
from app.services.wigner_service import run_ensemble, fit_fng

__all__ = [
    "charges",
    "solve_ring",
    "solve_ring_branches",
    "thermo_derivatives",
    "run_quench",
    "scan_phase_diagram",
    "fit_critical_exponent",
    "bogoliubov_spectrum",
    "goldstone_gibbs_modes",
    "floquet_propagate",
    "parse_config",
    "write_outputs",
    "verify_manifest",
    "Grid1D",
    "split_step",
    "imaginary_time",
    "run_ensemble",
    "fit_fng",
]
