"""Simulation engines: geometry, effective Hamiltonians, quantum/classical dynamics, readout"""

__version__ = '1.0.0'
