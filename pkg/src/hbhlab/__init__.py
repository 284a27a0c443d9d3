"""Neural quantum states for hard-core bosons in a magnetic field.

Subpackages and modules:

``hilbert``      basis enumeration, ranking, hopping moves
``hamiltonian``  sparse Hofstadter-Bose-Hubbard Hamiltonian
``exact``        Lanczos ground states, Schmidt decomposition, truncation
``ansatz``       MLP / CNN wave functions with hand-written backpropagation
``optimize``     SR, supervised imaginary-time evolution, supervised fitting
``analysis``     error metrics, element statistics, landscapes, Hessians
``experiments``  sweeps, ablations and the ``hbhlab`` command line
"""

from .errors import HBHError
from .hamiltonian import HbhParams, SparseHamiltonian, build_hamiltonian, hbh_hamiltonian
from .hilbert import BasisTable, LatticeShape, basis_dimension, build_basis

__version__ = "0.1.0"

__all__ = [
    "BasisTable",
    "HBHError",
    "HbhParams",
    "LatticeShape",
    "SparseHamiltonian",
    "basis_dimension",
    "build_basis",
    "build_hamiltonian",
    "hbh_hamiltonian",
]
