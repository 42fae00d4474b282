"""Measurement-fidelity estimation for small projective quantum measurements.

Submodules:

* :mod:`qmfe.qcore`: normalized Pauli basis, eigensystems, dense helpers.
* :mod:`qmfe.measurements`: PVM/POVM types, Bell/EJM/computational builders,
  noise models and a seeded Born-rule device.
* :mod:`qmfe.protocols`: efficient, global and direct estimation protocols.
* :mod:`qmfe.analysis`: exact oracles, stabilizer Renyi entropies, sample
  complexity bounds.
* :mod:`qmfe.harness` / :mod:`qmfe.cli`: seeded experiment driver.
"""

from .analysis import (
    exact_fidelity,
    stabilizer_renyi_entropy,
    support_sets,
    variance_constants,
)
from .errors import NumericalError, QmfeError, SupportError, UnsupportedOrderError, ValidationError
from .measurements import (
    MeasurementDevice,
    NoiseSpec,
    Povm,
    Pvm,
    apply_depolarizing,
    apply_noise,
    bell_pvm,
    build_pvm,
    computational_pvm,
    ejm_pvm,
)
from .protocols import EstimateReport, Precision, run_direct, run_efficient, run_global, run_protocol

__version__ = "0.1.0"

__all__ = [
    "EstimateReport",
    "MeasurementDevice",
    "NoiseSpec",
    "NumericalError",
    "Povm",
    "Precision",
    "Pvm",
    "QmfeError",
    "SupportError",
    "UnsupportedOrderError",
    "ValidationError",
    "apply_depolarizing",
    "apply_noise",
    "bell_pvm",
    "build_pvm",
    "computational_pvm",
    "ejm_pvm",
    "exact_fidelity",
    "run_direct",
    "run_efficient",
    "run_global",
    "run_protocol",
    "stabilizer_renyi_entropy",
    "support_sets",
    "variance_constants",
]
