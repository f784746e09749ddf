"""Parallel-in-time intermediate-targets solvers for heat-equation optimal control."""
