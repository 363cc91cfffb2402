"""Active kinematic calibration of serial chains.

Modules:
    kinematics  twist exponentials, forward kinematics, observation Jacobian
    estimator   recursive least squares and gradient baselines
    direct      DIRECT / DIRECT-l bounded global minimization
    fov         spherical-sector visibility predicate
    active      A-optimal next-configuration selection
    sim         ground-truth fixtures, noisy measurements, error metrics
    cli         experiment runner and summaries
"""

from . import active, cli, direct, estimator, fov, kinematics, sim

__all__ = ["active", "cli", "direct", "estimator", "fov", "kinematics", "sim"]
__version__ = "0.1.0"
