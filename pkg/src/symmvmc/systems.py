"""Canonical toy systems used by the test suite and the CLI presets.

Each builder returns (hamiltonian, group, region): the potential, the
symmetry group that provably leaves it invariant, and a fundamental region
for that group suitable for smoothed canonicalization.
"""

import numpy as np

from .groups import Isometry, SpaceGroup, close_group
from .smoothing import FundamentalRegion, interval_region, right_triangle_region
from .vmc import Hamiltonian

CHAIN_SITE = 0.25
DEFAULT_DEPTH = 2.0
DEFAULT_SIGMA = 1.0
DEFAULT_SCALE = 2.0 * np.pi


def chain_system(lambda_int=0.0, depth=DEFAULT_DEPTH, sigma=DEFAULT_SIGMA,
                 scale=DEFAULT_SCALE):
    """1D single Gaussian well at x = 1/4.

    Its symmetry is the order-2 group generated by the reflection-with-
    translation x ↦ 1/2 − x (the point reflection through the well).  A
    fundamental region is [1/4, 3/4): the map folds the other half in.
    """
    h = Hamiltonian(1, [[CHAIN_SITE]], depth, sigma, scale,
                    lambda_int=lambda_int)
    group = close_group([Isometry([[-1.0]], [0.5])], max_order=4)
    region = interval_region(0.25, 0.75)
    return h, group, region


def square_system(lambda_int=0.0, depth=DEFAULT_DEPTH, sigma=DEFAULT_SIGMA,
                  scale=DEFAULT_SCALE):
    """2D square lattice with one Gaussian well at the cell center.

    All eight signed-permutation isometries about the origin fix (1/2, 1/2)
    modulo the lattice, so the full p4mm point group applies.
    """
    h = Hamiltonian(2, [[0.5, 0.5]], depth, sigma, scale,
                    lambda_int=lambda_int)
    rot90 = Isometry([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0])
    mirror = Isometry([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    group = close_group([rot90, mirror], max_order=16)
    region = right_triangle_region()
    return h, group, region


def free_system(dim, scale=DEFAULT_SCALE):
    """No potential; every lattice isometry is a symmetry."""
    return Hamiltonian(dim, np.zeros((0, dim)), 0.0, 1.0, scale)
