"""Distributed 2D structured-grid simulator of biofilm growth and detachment in shear flow.

Modules: ``mesh`` (grid, decomposition, ghost exchange), ``operators`` and
``stencil`` (finite differences), ``linsolve`` (stencil matrices, Jacobi-GMRES),
``transport`` (Cahn-Hilliard network and nutrient equations), ``flow``
(projection method) and ``driver`` (configuration, time loop, output, scaling).
"""

__version__ = "0.1.0"
