"""
Distributed Robust Resource Allocation Solver

This package contains all modules for the swarm solver:
- Problem model and assumption checks
- Projections and subgradients
- Budget-uncertainty robust counterpart
- Projected primal-dual dynamics and trajectories
- KKT / Lyapunov certification
- Centralized reference oracle
- JSON / CSV I/O and the command-line front end
"""

__version__ = "1.0.0"
