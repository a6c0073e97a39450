"""Solver suite for Hamilton-Jacobi Dirichlet problems with large Hamiltonian drift.

Pipeline: region geometry -> orbit-averaged effective Hamiltonians ->
2D monotone solver for the perturbed problem -> maximal solution of the limit
problem on the level-set graph -> convergence harness tying the two together.
"""

__version__ = "0.1.0"
