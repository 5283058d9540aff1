"""Runtime configuration for spinshell"""
import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Environment-driven runtime settings"""

    APP_NAME = 'spinshell'
    APP_VERSION = '1.0.0'
    CSV_SCHEMA_VERSION = '1'

    # Output
    OUTPUT_ROOT = os.getenv('SPINSHELL_OUTPUT_ROOT', 'results')
    LOG_LEVEL = os.getenv('SPINSHELL_LOG_LEVEL', 'INFO').upper()

    # Parallelism budget used when --threads is not given
    THREADS = int(os.getenv('SPINSHELL_THREADS', 1))

    # Quantum engine limits
    MAX_DENSE_SPINS = int(os.getenv('SPINSHELL_MAX_DENSE_SPINS', 14))
    MAX_TRAJECTORY_SPINS = int(os.getenv('SPINSHELL_MAX_TRAJECTORY_SPINS', 20))

    # Integrator tolerances
    DENSE_RTOL = 1e-8
    TRAJECTORY_RTOL = 1e-6
    CLASSICAL_RTOL = 1e-9

    # Floats written to CSV with enough digits for a bit-exact round trip
    CSV_SIGNIFICANT_DIGITS = 17

    @staticmethod
    def validate():
        """Validate runtime settings"""
        if Config.THREADS < 1:
            raise ValueError("SPINSHELL_THREADS must be a positive integer")
        if not 1 <= Config.MAX_DENSE_SPINS <= Config.MAX_TRAJECTORY_SPINS:
            raise ValueError("SPINSHELL_MAX_DENSE_SPINS must lie in [1, SPINSHELL_MAX_TRAJECTORY_SPINS]")
        if Config.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"Unknown SPINSHELL_LOG_LEVEL: {Config.LOG_LEVEL}")
        return True
