"""spinshell - Floquet spin-texture simulations around NV centers"""

__version__ = '1.0.0'
