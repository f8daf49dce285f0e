"""Two detuned qubits in a common bosonic heat bath.

Reduced dynamics via Redfield, GAME, TCL4 and TEMPO, plus the search for
fault-tolerant excited states across the Hamiltonian parameter space.
"""

__version__ = "0.1.0"

from .bath import BathSpec  # noqa: F401
from .system import SystemModel  # noqa: F401
