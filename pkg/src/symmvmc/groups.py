"""Finite groups of isometries on the unit torus and their diagonal action.

All geometry lives in lattice coordinates: the supercell is the unit box
[0,1)^d and translations by integer vectors act as the identity.  Rotation
parts are integer matrices in this basis; for the hexagonal lattice they are
orthogonal with respect to the lattice Gram matrix rather than the identity.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

ROTATION_TOL = 1e-12
DEDUP_TOL = 1e-9

#: Gram matrices of the supported lattice bases.  chain/square/cubic use an
#: orthonormal basis; hexagonal uses a1=(1,0), a2=(-1/2, sqrt(3)/2) so that
#: six-fold rotations stay integer matrices in lattice coordinates.
LATTICE_GRAM = {
    "chain": np.eye(1),
    "square": np.eye(2),
    "hexagonal": np.array([[1.0, -0.5], [-0.5, 1.0]]),
    "cubic": np.eye(3),
}

LATTICE_DIM = {"chain": 1, "square": 2, "hexagonal": 2, "cubic": 3}


class GroupClosureError(ValueError):
    """Raised when closing a generator set exceeds the allowed order."""


def default_lattice(dim):
    return {1: "chain", 2: "square", 3: "cubic"}[dim]


def torus_delta(a, b):
    """Minimum-image difference a - b on the unit torus, per coordinate."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - np.round(d)


class Isometry:
    """Affine map x -> A x + b in lattice coordinates.

    Args:
        rotation: (d, d) matrix with entries in {-1, 0, 1}.
        translation: length-d vector, arbitrary real entries.

    The rotation must be unimodular (|det A| = 1); orthogonality with respect
    to the lattice metric is enforced where the lattice is known, i.e. when a
    SpaceGroup is assembled.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        rotation = np.array(rotation, dtype=float)
        translation = np.atleast_1d(np.array(translation, dtype=float))
        if rotation.ndim != 2 or rotation.shape[0] != rotation.shape[1]:
            raise ValueError(f"rotation must be square, got shape {rotation.shape}")
        d = rotation.shape[0]
        if translation.shape != (d,):
            raise ValueError(
                f"translation shape {translation.shape} does not match dimension {d}"
            )
        if not np.all(np.isfinite(rotation)) or not np.all(np.isfinite(translation)):
            raise ValueError("isometry entries must be finite")
        if np.max(np.abs(rotation - np.round(rotation))) > ROTATION_TOL:
            raise ValueError("rotation entries must be integers in lattice coordinates")
        rotation = np.round(rotation)
        if np.max(np.abs(rotation)) > 1:
            raise ValueError("rotation entries must lie in {-1, 0, 1}")
        if abs(abs(np.linalg.det(rotation)) - 1.0) > 1e-9:
            raise ValueError("rotation must be unimodular (|det| = 1)")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        self.rotation = rotation
        self.translation = translation

    @property
    def dim(self):
        return self.rotation.shape[0]

    def apply(self, x):
        """Apply to one point or a stack of points (last axis = coordinates)."""
        x = np.asarray(x, dtype=float)
        return x @ self.rotation.T + self.translation

    def sort_key(self):
        return tuple(self.rotation.ravel()) + tuple(self.translation)

    def __repr__(self):
        a = np.array2string(self.rotation.astype(int).ravel(), separator=",")
        b = np.array2string(self.translation, separator=",", precision=6)
        return f"Isometry(A={a}, b={b})"


def identity_isometry(dim):
    return Isometry(np.eye(dim), np.zeros(dim))


def compose(g, h):
    """Composition g after h: x -> g(h(x)) = (A_g A_h) x + (A_g b_h + b_g)."""
    if g.dim != h.dim:
        raise ValueError(f"dimension mismatch: {g.dim} vs {h.dim}")
    return Isometry(g.rotation @ h.rotation, g.rotation @ h.translation + g.translation)


def inverse(g):
    """Inverse map x -> A^{-1}(x - b).  A^{-1} is again an integer matrix."""
    inv_rot = np.round(np.linalg.inv(g.rotation))
    if np.max(np.abs(inv_rot @ g.rotation - np.eye(g.dim))) > 1e-9:
        raise ValueError("rotation is not invertible over the lattice")
    return Isometry(inv_rot, -inv_rot @ g.translation)


def canonical(g):
    """Reduce the translation part into [0,1)^d; the torus action is unchanged."""
    b = np.mod(g.translation, 1.0)
    # mod can return 1.0 for tiny negative inputs; fold that back to 0.
    b = np.where(b >= 1.0, b - 1.0, b)
    return Isometry(g.rotation, b)


def isometries_equal(g, h, tol=DEDUP_TOL):
    """Equality modulo unit translations (torus metric on the translation)."""
    if g.dim != h.dim:
        return False
    if np.max(np.abs(g.rotation - h.rotation)) > tol:
        return False
    return np.max(np.abs(torus_delta(g.translation, h.translation))) <= tol


def check_rotation_orthogonal(rotation, gram):
    """A^T G A must reproduce the lattice Gram matrix G."""
    err = np.max(np.abs(rotation.T @ gram @ rotation - gram))
    if err > ROTATION_TOL:
        raise ValueError(
            f"rotation is not orthogonal w.r.t. the lattice metric (error {err:.2e})"
        )


class SpaceGroup:
    """A finite, ordered group of isometries modulo supercell translations.

    Construction verifies the group laws: identity membership, closure under
    canonical composition, and closure under inverse.  Element order is
    whatever the caller supplies; close_group produces the deterministic
    BFS-lexicographic order used throughout.
    """

    __slots__ = ("dim", "elements", "generator_indices", "lattice")

    def __init__(self, elements, generator_indices=(), lattice=None):
        elements = tuple(canonical(g) for g in elements)
        if not elements:
            raise ValueError("a group needs at least the identity element")
        dim = elements[0].dim
        if lattice is None:
            lattice = default_lattice(dim)
        if lattice not in LATTICE_GRAM:
            raise ValueError(f"unknown lattice {lattice!r}")
        if LATTICE_DIM[lattice] != dim:
            raise ValueError(f"lattice {lattice!r} is {LATTICE_DIM[lattice]}-dimensional")
        gram = LATTICE_GRAM[lattice]
        for g in elements:
            if g.dim != dim:
                raise ValueError("all elements must share one dimension")
            check_rotation_orthogonal(g.rotation, gram)
        self._check_group_laws(elements, dim)
        self.dim = dim
        self.elements = elements
        self.generator_indices = tuple(int(i) for i in generator_indices)
        self.lattice = lattice

    @staticmethod
    def _check_group_laws(elements, dim):
        ident = identity_isometry(dim)
        if not any(isometries_equal(g, ident) for g in elements):
            raise ValueError("group does not contain the identity")

        def contains(g):
            return any(isometries_equal(g, h) for h in elements)

        for g in elements:
            if not contains(canonical(inverse(g))):
                raise ValueError(f"group not closed under inverse at {g!r}")
            for h in elements:
                if not contains(canonical(compose(g, h))):
                    raise ValueError(f"group not closed under composition at {g!r} * {h!r}")

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    def index_of(self, g, tol=DEDUP_TOL):
        for i, h in enumerate(self.elements):
            if isometries_equal(g, h, tol):
                return i
        raise ValueError(f"{g!r} is not an element of this group")

    def __repr__(self):
        return f"SpaceGroup(dim={self.dim}, order={len(self.elements)}, lattice={self.lattice!r})"


def close_group(generators, max_order, lattice=None):
    """Close a generator list under canonical composition.

    Breadth-first from the identity, extending words by one generator at a
    time; each BFS level is sorted lexicographically on (rotation,
    translation) entries so the element order is reproducible.

    Raises GroupClosureError naming the first max_order elements if the
    closure grows past max_order.
    """
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    dim = generators[0].dim if generators else LATTICE_DIM[lattice] if lattice else None
    if dim is None:
        raise ValueError("empty generator list needs an explicit lattice")
    gens = [canonical(g) for g in generators]
    for g in gens:
        if g.dim != dim:
            raise ValueError("generators must share one dimension")
    elements = [identity_isometry(dim)]
    frontier = list(elements)
    while frontier:
        new = []
        for g in frontier:
            for h in gens:
                c = canonical(compose(g, h))
                known = any(
                    isometries_equal(c, e) for e in elements
                ) or any(isometries_equal(c, e) for e in new)
                if not known:
                    new.append(c)
        new.sort(key=Isometry.sort_key)
        elements.extend(new)
        if len(elements) > max_order:
            listing = ", ".join(repr(g) for g in elements[:max_order])
            raise GroupClosureError(
                f"group closure exceeds max_order={max_order}; "
                f"first {max_order} elements: [{listing}]"
            )
        frontier = new
    generator_indices = []
    group = SpaceGroup(elements, lattice=lattice)
    for g in gens:
        generator_indices.append(group.index_of(g))
    return SpaceGroup(elements, generator_indices=generator_indices, lattice=lattice)


SPIN_UP = 1
SPIN_DOWN = -1

_SPIN_ALIASES = {
    "up": SPIN_UP,
    "down": SPIN_DOWN,
    1: SPIN_UP,
    -1: SPIN_DOWN,
    SPIN_UP: SPIN_UP,
    SPIN_DOWN: SPIN_DOWN,
}


class Configuration:
    """n electron positions in lattice coordinates plus spin labels."""

    __slots__ = ("positions", "spins")

    def __init__(self, positions, spins):
        positions = np.atleast_2d(np.array(positions, dtype=float))
        if positions.ndim != 2:
            raise ValueError("positions must be an (n, d) matrix")
        n = positions.shape[0]
        if n < 1:
            raise ValueError("need at least one electron")
        spins = [_SPIN_ALIASES.get(s if not isinstance(s, np.generic) else s.item()) for s in spins]
        if any(s is None for s in spins) or len(spins) != n:
            raise ValueError("spins must be n labels from {up, down} (or +1/-1)")
        spins = np.array(spins, dtype=np.int8)
        positions.flags.writeable = False
        spins.flags.writeable = False
        self.positions = positions
        self.spins = spins

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def spin_sector(self, spin):
        """Indices of the electrons carrying the given spin label."""
        return np.flatnonzero(self.spins == _SPIN_ALIASES[spin])

    def __repr__(self):
        return f"Configuration(n={self.n}, dim={self.dim}, spins={self.spins.tolist()})"


def apply_diagonal(g, c):
    """Apply one isometry to every electron; positions wrap into [0,1)^d."""
    if g.dim != c.dim:
        raise ValueError(f"dimension mismatch: isometry is {g.dim}D, configuration {c.dim}D")
    moved = np.mod(g.apply(c.positions), 1.0)
    moved = np.where(moved >= 1.0, moved - 1.0, moved)
    return Configuration(moved, c.spins)


class DiagonalAction:
    """The diagonal action of a SpaceGroup on n-electron configurations."""

    __slots__ = ("group",)

    def __init__(self, group):
        self.group = group

    def apply(self, g, c):
        return apply_diagonal(g, c)

    def orbit(self, c):
        """Images of c under every group element, in group order."""
        return [apply_diagonal(g, c) for g in self.group]


def build_g_tilde(group):
    """Rotation parts of a space group, re-closed as a point group."""
    seen = []
    for g in group:
        bare = Isometry(g.rotation, np.zeros(group.dim))
        if not any(isometries_equal(bare, h) for h in seen):
            seen.append(bare)
    return close_group(seen, max_order=len(group), lattice=group.lattice)


def is_symmetric_configuration(group, c, tol):
    """True iff every group element maps c to itself up to same-spin permutation.

    Positions are compared on the torus (minimum image, max norm); the
    matching within each spin sector is solved exactly by linear assignment.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sectors = [c.spin_sector("up"), c.spin_sector("down")]
    for g in group:
        moved = apply_diagonal(g, c)
        for sector in sectors:
            if len(sector) == 0:
                continue
            a = moved.positions[sector]
            b = c.positions[sector]
            cost = np.max(np.abs(torus_delta(a[:, None, :], b[None, :, :])), axis=-1)
            rows, cols = linear_sum_assignment(cost)
            if np.max(cost[rows, cols]) > tol:
                return False
    return True
