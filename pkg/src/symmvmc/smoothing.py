"""Smoothed step functions, fundamental regions, and ε-shell boundary weights.

Everything here is a pure function of its inputs.  The two smoothing kinds are
"spline2" (piecewise cubic, twice continuously differentiable) and
"smooth_inf" (exponential ratio, infinitely differentiable).
"""

import itertools
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .groups import Isometry, identity_isometry

KINDS = ("spline2", "smooth_inf")
DEFAULT_EPSILON = 0.05

#: Unit-translation offsets searched when enumerating the boundary set.  After
#: reducing the electron position into [0,1)^d this range is wide enough for
#: every built-in region; tests assert that a wider shell finds nothing new.
UNIT_SHELL = (-1, 0, 1)


def _wrap_unit(x):
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(y >= 1.0, y - 1.0, y)


def step(kind, w):
    """Smoothed step s(w): 0 for w <= 0, 1 for w >= 1, increasing between."""
    return step_derivs(kind, w)[0]


def step_derivs(kind, w):
    """Value, first and second derivative of the step function, elementwise."""
    w = np.asarray(w, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    s = np.zeros_like(w)
    s1 = np.zeros_like(w)
    s2 = np.zeros_like(w)
    if kind == "spline2":
        m = (w > 0) & (w <= 1.0 / 3.0)
        s[m] = 4.5 * w[m] ** 3
        s1[m] = 13.5 * w[m] ** 2
        s2[m] = 27.0 * w[m]
        m = (w > 1.0 / 3.0) & (w <= 2.0 / 3.0)
        s[m] = -4.5 * (1 - w[m]) ** 3 + 0.5 * (2 - 3 * w[m]) ** 3 + 1
        s1[m] = 13.5 * (1 - w[m]) ** 2 - 4.5 * (2 - 3 * w[m]) ** 2
        s2[m] = 27.0 * (1 - 2 * w[m])
        m = (w > 2.0 / 3.0) & (w < 1.0)
        s[m] = -4.5 * (1 - w[m]) ** 3 + 1
        s1[m] = 13.5 * (1 - w[m]) ** 2
        s2[m] = -27.0 * (1 - w[m])
        s[w >= 1.0] = 1.0
    elif kind == "smooth_inf":
        # s = sigmoid(z) with z = 1/(1-w) - 1/w; the factor sigma*(1-sigma)
        # underflows to exact zero well before 1/w or 1/(1-w) can overflow.
        m = (w > 1e-8) & (w < 1 - 1e-8)
        wm = w[m]
        z = 1.0 / (1.0 - wm) - 1.0 / wm
        sig = expit(z)
        bump = sig * expit(-z)
        z1 = 1.0 / (1.0 - wm) ** 2 + 1.0 / wm**2
        z2 = 2.0 / (1.0 - wm) ** 3 - 2.0 / wm**3
        s[m] = sig
        s1[m] = bump * z1
        s2[m] = bump * ((1.0 - 2.0 * sig) * z1**2 + z2)
        s[w >= 1 - 1e-8] = 1.0
    else:
        raise ValueError(f"unknown smoothing kind {kind!r}")
    if scalar:
        return float(s[0]), float(s1[0]), float(s2[0])
    return s, s1, s2


def step_tilde_derivs(kind, w):
    """s~(w) = w*s(w) and its first two derivatives."""
    s, s1, s2 = step_derivs(kind, w)
    return w * s, s + w * s1, 2 * s1 + w * s2


class SmoothingSpec(NamedTuple):
    """Which step function to use and the shell width ε."""

    kind: str
    epsilon: float

    @staticmethod
    def create(kind, epsilon=DEFAULT_EPSILON):
        if kind not in KINDS:
            raise ValueError(f"smoothing kind must be one of {KINDS}, got {kind!r}")
        epsilon = float(epsilon)
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        return SmoothingSpec(kind, epsilon)


def lambda_eps(spec, w):
    """Smoother λ_ε(w) = s(1 - w/ε): equals 1 below 0 and 0 above ε."""
    return step(spec.kind, 1.0 - np.asarray(w, dtype=float) / spec.epsilon)


def lambda_eps_derivs(spec, w):
    """λ_ε with analytic first and second derivative in w."""
    u = 1.0 - np.asarray(w, dtype=float) / spec.epsilon
    s, s1, s2 = step_derivs(spec.kind, u)
    return s, -s1 / spec.epsilon, s2 / spec.epsilon**2


class FundamentalRegion:
    """Simplex-like region given by a center and outward face normals.

    Each normal n_l points from the center to face l and its length is the
    center-to-face distance, so membership is
    (x - c0)^T n_l / |n_l|^2 <= 1 for every l.
    """

    __slots__ = ("center", "faces")

    def __init__(self, center, faces):
        center = np.atleast_1d(np.array(center, dtype=float))
        faces = np.atleast_2d(np.array(faces, dtype=float))
        if faces.shape[1] != center.shape[0]:
            raise ValueError("face normals must match the center's dimension")
        norms = np.linalg.norm(faces, axis=1)
        if np.any(norms <= 0):
            raise ValueError("face normals must be nonzero")
        center.flags.writeable = False
        faces.flags.writeable = False
        self.center = center
        self.faces = faces

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def inradius(self):
        """Radius of the largest center-placed ball inside the region."""
        return float(np.min(np.linalg.norm(self.faces, axis=1)))

    def face_coordinates(self, x, g=None):
        """Per-face affine coordinates u_l of x relative to g(Π0).

        u_l = (x - g(c0))^T (A n_l) / |n_l|^2 - 1, zero on face l, negative
        inside.  The normals are rotated with g so that the region transforms
        as a rigid body and d(g(x), g(Π0)) = d(x, Π0) holds exactly.
        """
        x = np.asarray(x, dtype=float)
        if g is None:
            center, normals = self.center, self.faces
        else:
            center = g.apply(self.center)
            normals = self.faces @ g.rotation.T
        sq = np.sum(self.faces**2, axis=1)
        return (normals @ (x - center)) / sq - 1.0

    def contains(self, x, g=None, tol=0.0):
        return bool(np.all(self.face_coordinates(x, g) <= tol))

    def __repr__(self):
        return f"FundamentalRegion(center={self.center.tolist()}, faces={self.faces.tolist()})"


def interval_region(lo, hi):
    """1D region [lo, hi): pairs with pure-translation or reflection groups."""
    if not hi > lo:
        raise ValueError("need hi > lo")
    half = 0.5 * (hi - lo)
    return FundamentalRegion([lo + half], [[half], [-half]])


def right_triangle_region(size=0.5):
    """Right triangle (0,0), (size,0), (size,size): pairs with the square-lattice
    point group of order eight (90° rotation plus axis mirror)."""
    if not size > 0:
        raise ValueError("size must be positive")
    r = size * (1.0 - np.sqrt(0.5))
    c0 = [size - r, r]
    diag = r / np.sqrt(2.0)
    return FundamentalRegion(c0, [[0.0, -r], [r, 0.0], [-diag, diag]])


def distance_to_region(region, kind, x, g=None):
    """Smoothed distance d(x, g(Π0)) = Σ_l s~(u_l)^2, zero iff x in closure."""
    u = region.face_coordinates(x, g)
    st, _, _ = step_tilde_derivs(kind, u)
    return float(np.sum(st**2))


def distance_with_derivs(region, kind, x, g=None):
    """Smoothed distance plus its gradient and Laplacian in x.

    The per-face coordinate u_l is affine in x, so with t(u) = s~(u)^2:
    grad d = Σ t'(u_l) grad u_l and lap d = Σ t''(u_l) |grad u_l|^2.
    """
    x = np.asarray(x, dtype=float)
    if g is None:
        normals = region.faces
    else:
        normals = region.faces @ g.rotation.T
    sq = np.sum(region.faces**2, axis=1)
    u = region.face_coordinates(x, g)
    st, st1, st2 = step_tilde_derivs(kind, u)
    t1 = 2.0 * st * st1
    t2 = 2.0 * (st1**2 + st * st2)
    grad_u = normals / sq[:, None]
    value = float(np.sum(st**2))
    grad = grad_u.T @ t1
    lap = float(np.sum(t2 * np.sum(grad_u**2, axis=1)))
    return value, grad, lap


class BoundaryMember(NamedTuple):
    index: int  # group element index
    offset: tuple  # unit-translation offset composed with the element
    map: Isometry  # the full affine map applied to configurations
    distance: float
    weight: float


class EmptyBoundarySetError(ValueError):
    """Raised when no group element brings the point within ε of the region."""


class BoundaryWeights:
    """The weighted boundary set of one electron position.

    Members are the affine maps taking the position within ε of the region;
    weights are nonnegative and sum to one.  Members sitting exactly on the
    shell carry weight zero but stay listed.
    """

    __slots__ = ("position", "members")

    def __init__(self, position, members):
        position = np.atleast_1d(np.asarray(position, dtype=float))
        members = tuple(members)
        if not members:
            raise EmptyBoundarySetError("boundary set must not be empty")
        weights = np.array([m.weight for m in members])
        if np.any(weights < 0):
            raise ValueError("boundary weights must be nonnegative")
        if abs(float(np.sum(weights)) - 1.0) > 1e-12:
            raise ValueError("boundary weights must sum to one")
        self.position = position
        self.members = members

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def boundary_set(region, spec, group, x):
    """Enumerate 𝒢_ε(x): group elements (with unit-translate extensions)
    whose image of x lies within ε of the region, with λ_ε-normalized weights.

    x is reduced into [0,1)^d before the search; the returned maps still act
    correctly on unreduced coordinates because the wavefunctions they feed are
    periodic.
    """
    x = _wrap_unit(x)
    dim = group.dim
    found = []
    for idx, g in enumerate(group):
        for tau in itertools.product(UNIT_SHELL, repeat=dim):
            shifted = Isometry(g.rotation, g.translation + np.array(tau, dtype=float))
            d = distance_to_region(region, spec.kind, shifted.apply(x))
            if d <= spec.epsilon:
                found.append((idx, tau, shifted, d))
    if not found:
        raise EmptyBoundarySetError(
            f"no group element maps {x!r} within epsilon={spec.epsilon} of the region; "
            "region and group are probably mismatched"
        )
    lam = np.array([lambda_eps(spec, d) for (_, _, _, d) in found])
    total = float(np.sum(lam))
    if total <= 0:
        raise EmptyBoundarySetError(
            "all boundary-set members have zero smoother weight; "
            "region and group are probably mismatched"
        )
    members = [
        BoundaryMember(idx, tau, iso, d, float(l / total))
        for (idx, tau, iso, d), l in zip(found, lam)
    ]
    return BoundaryWeights(x, members)


def boundary_set_with_derivs(region, spec, group, x):
    """Boundary set plus, per member, value/gradient/Laplacian of its weight.

    The enumeration (which members appear) is frozen at x; weights are then
    smooth functions of x through λ_ε and the region distance, and the quotient
    rule gives their derivatives.  Returns (BoundaryWeights, list of
    (weight, grad_weight, lap_weight)) in matching member order.
    """
    bw = boundary_set(region, spec, group, x)
    xw = bw.position
    vals, grads, laps = [], [], []
    for m in bw.members:
        d, gd, ld = distance_with_derivs(region, spec.kind, m.map.apply(xw))
        lv, l1, l2 = lambda_eps_derivs(spec, d)
        # chain through y = m.map(x): grad_x = A^T grad_y, laplacian unchanged
        a = lv
        ga = m.map.rotation.T @ (l1 * gd)
        la = l2 * float(gd @ gd) + l1 * ld
        vals.append(float(a))
        grads.append(ga)
        laps.append(float(la))
    total = float(np.sum(vals))
    gtot = np.sum(grads, axis=0)
    ltot = float(np.sum(laps))
    out = []
    for a, ga, la in zip(vals, grads, laps):
        w = a / total
        gw = ga / total - a * gtot / total**2
        lw = (
            la / total
            - (2.0 * float(ga @ gtot) + a * ltot) / total**2
            + 2.0 * a * float(gtot @ gtot) / total**3
        )
        out.append((w, gw, lw))
    return bw, out
