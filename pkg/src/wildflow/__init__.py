"""Wild Hölder solutions of hypodissipative Navier-Stokes: parameter ledger and spectral pipeline."""

__version__ = "0.1.0"
