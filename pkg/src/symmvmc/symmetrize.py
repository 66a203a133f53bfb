"""Symmetrized wavefunctions: group averaging, data augmentation,
subsampled averaging, and smoothed canonicalization.

Group averaging (GA, also serving as post hoc averaging PA at inference)
forms (1/m)Σ_g ψ(g(x)) in the linear domain via sign-aware log-sum-exp.
Smoothed canonicalization (SC, also serving post hoc canonicalization PC)
forms (1/n)Σ_k Σ_{g ∈ 𝒢_ε(x_k)} w_ε^g(x_k)·ψ(g(x)) with the boundary sets
and weights of the smoothing module.  Derivatives freeze the enumeration at
the evaluation point and differentiate each (k, g) product: weights through
λ_ε and the smoothed distance, wavefunction factors through the isometry
(gradient rows pulled back by Aᵀ; the Laplacian is invariant because the
rotations are Euclidean-orthogonal, which is checked).

Branch evaluations are independent; reductions run in ascending element
order so repeated runs sum bitwise identically.  A branch at a node of the
base contributes zero; only when every branch is at a node (or the signed
sum cancels exactly) is the result a node.
"""

import numpy as np

from .ansatz import WavefunctionEval, evaluate_batch, node_eval
from .groups import Configuration, apply_diagonal
from .smoothing import boundary_set_with_derivs

ORTHOGONAL_TOL = 1e-9


def _require_euclidean(elements, why):
    for g in elements:
        a = g.rotation
        if np.max(np.abs(a.T @ a - np.eye(a.shape[0]))) > ORTHOGONAL_TOL:
            raise ValueError(
                f"{why} requires Euclidean-orthogonal rotations (AᵀA = I); "
                "got a metric-orthogonal element of a non-orthonormal lattice"
            )


def _branch_positions(g, positions):
    moved = g.apply(positions) % 1.0
    return np.where(moved >= 1.0, moved - 1.0, moved)


def _eval_to_single(out, b=0):
    if out["sign"][b] == 0:
        return node_eval()
    return WavefunctionEval(
        float(out["log_abs"][b]),
        float(out["sign"][b]),
        out["grad_x"][b] if "grad_x" in out else None,
        float(out["laplacian_over_psi"][b]) if "laplacian_over_psi" in out
        else None,
        out["grad_params"][b] if "grad_params" in out else None,
    )


def ga_evaluate_batch(base, subset, positions, spins, want_grad_x=True,
                      want_laplacian=True, want_grad_params=True):
    """(1/m)Σ_g ψ(g(x)) over a batch; same result dict as evaluate_batch.

    subset is an ordered list of isometries; the reduction follows that
    order.  Branch gradients are pulled back through each isometry.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("GA subset must be nonempty")
    if want_laplacian:
        _require_euclidean(subset, "the averaged Laplacian")
    x = np.asarray(positions, dtype=float)
    bsz = x.shape[0]
    m = len(subset)
    stacked = np.concatenate([_branch_positions(g, x) for g in subset])
    res = evaluate_batch(base, stacked, spins, want_grad_x=want_grad_x,
                         want_laplacian=want_laplacian,
                         want_grad_params=want_grad_params)
    logs = res["log_abs"].reshape(m, bsz)
    signs = res["sign"].reshape(m, bsz)

    finite = signs != 0
    mref = np.max(np.where(finite, logs, -np.inf), axis=0)
    mref_safe = np.where(np.isfinite(mref), mref, 0.0)
    scaled = np.where(finite, np.exp(logs - mref_safe), 0.0) * signs
    total = np.sum(scaled, axis=0) / m
    sign = np.sign(total)
    node = sign == 0
    with np.errstate(divide="ignore"):
        log_abs = np.where(node, -np.inf, np.log(np.abs(total)) + mref_safe)
    out = {"log_abs": log_abs, "sign": sign}

    if not (want_grad_x or want_laplacian or want_grad_params):
        return out
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = scaled / m / np.where(node, np.nan, total)  # (m, B)

    if want_grad_x:
        grads = res["grad_x"].reshape(m, bsz, *x.shape[1:])
        acc = np.zeros(x.shape)
        for gi, g in enumerate(subset):
            br = np.where(finite[gi][:, None, None], grads[gi], 0.0)
            acc += ratio[gi][:, None, None] * (br @ g.rotation)
        out["grad_x"] = np.where(node[:, None, None], np.nan, acc)
    if want_laplacian:
        laps = res["laplacian_over_psi"].reshape(m, bsz)
        laps = np.where(finite, laps, 0.0)
        lap = np.sum(ratio * laps, axis=0)
        out["laplacian_over_psi"] = np.where(node, np.nan, lap)
    if want_grad_params:
        gps = res["grad_params"].reshape(m, bsz, -1)
        gps = np.where(finite[:, :, None], gps, 0.0)
        gp = np.sum(ratio[:, :, None] * gps, axis=0)
        out["grad_params"] = np.where(node[:, None], np.nan, gp)
    return out


def ga_wavefunction(base, subset, c):
    """Single-configuration group average as a WavefunctionEval."""
    if not isinstance(c, Configuration):
        raise TypeError("expected a Configuration")
    out = ga_evaluate_batch(base, subset, c.positions[None], c.spins)
    return _eval_to_single(out)


def da_transform(group, c, rng):
    """Apply one uniformly drawn group element diagonally."""
    if len(group) == 0:
        raise ValueError("group must be nonempty")
    g = group[int(rng.integers(len(group)))]
    return apply_diagonal(g, c)


def gas_subsample(group, k, step_index, seed):
    """Uniform without-replacement subsample of k elements.

    Deterministic in (seed, step_index); returned in ascending element
    order so downstream reductions stay bit-stable.
    """
    if not 1 <= k <= len(group):
        raise ValueError(f"k must be in [1, {len(group)}], got {k}")
    rng = np.random.default_rng([int(seed), int(step_index)])
    idx = np.sort(rng.choice(len(group), size=k, replace=False))
    return [group[int(i)] for i in idx]


def sc_evaluate_batch(base, group, region, spec, positions, spins,
                      want_grad_x=True, want_laplacian=True,
                      want_grad_params=True):
    """Smoothed canonicalization over a batch of configurations.

    For every configuration and every electron index k, the ε-boundary set
    of x_k is enumerated; each member contributes its weight times the base
    evaluated at the diagonally transformed configuration, and the per-k
    sums are averaged.  Transformed configurations are shared between
    electrons that select the same group element.
    """
    if region.inradius <= spec.epsilon:
        raise ValueError(
            f"region inradius {region.inradius:.4g} must exceed "
            f"epsilon {spec.epsilon:.4g}"
        )
    want_derivs = want_grad_x or want_laplacian or want_grad_params
    if want_laplacian:
        _require_euclidean(group, "the canonicalized Laplacian")
    x = np.asarray(positions, dtype=float)
    bsz, n, d = x.shape

    # enumerate boundary sets, collect unique (config, element) branches
    per_config = []  # per b: (members, weight-derivs, {elem: slot})
    branch_requests = []  # (b, elem_index)
    for b in range(bsz):
        elems = {}
        rows = []
        for k in range(n):
            bw, derivs = boundary_set_with_derivs(region, spec, group, x[b, k])
            for mem, wd in zip(bw.members, derivs):
                if mem.index not in elems:
                    elems[mem.index] = len(branch_requests)
                    branch_requests.append((b, mem.index))
                rows.append((k, mem.index, wd))
        per_config.append((rows, elems))

    stacked = np.empty((len(branch_requests), n, d))
    for slot, (b, ei) in enumerate(branch_requests):
        stacked[slot] = _branch_positions(group[ei], x[b])
    res = evaluate_batch(base, stacked, spins, want_grad_x=want_derivs,
                         want_laplacian=want_laplacian,
                         want_grad_params=want_grad_params)

    out = {"log_abs": np.empty(bsz), "sign": np.empty(bsz)}
    if want_grad_x:
        out["grad_x"] = np.full((bsz, n, d), np.nan)
    if want_laplacian:
        out["laplacian_over_psi"] = np.full(bsz, np.nan)
    if want_grad_params:
        out["grad_params"] = np.full((bsz, base.n_params), np.nan)

    for b in range(bsz):
        rows, elems = per_config[b]
        logs = res["log_abs"]
        signs = res["sign"]
        live = [(k, ei, wd) for (k, ei, wd) in rows if signs[elems[ei]] != 0]
        if not live:
            out["log_abs"][b] = -np.inf
            out["sign"][b] = 0.0
            continue
        mref = max(logs[elems[ei]] for (_, ei, _) in live)
        # value: Σ_{k,g} w·s·e^{l−mref} (the 1/n cancels in all ratios but
        # must scale the reported magnitude)
        total = 0.0
        for k, ei, (w, gw, lw) in live:
            total += w * signs[elems[ei]] * np.exp(logs[elems[ei]] - mref)
        value = total / n
        if value == 0.0:
            out["log_abs"][b] = -np.inf
            out["sign"][b] = 0.0
            continue
        out["sign"][b] = np.sign(value)
        out["log_abs"][b] = np.log(abs(value)) + mref
        if not want_derivs:
            continue
        grad = np.zeros((n, d))
        lap = 0.0
        gpar = np.zeros(base.n_params) if want_grad_params else None
        for k, ei, (w, gw, lw) in live:
            slot = elems[ei]
            psi = signs[slot] * np.exp(logs[slot] - mref)  # scaled ψ(g(x))
            rot = group[ei].rotation
            gb = res["grad_x"][slot] @ rot  # rows (Aᵀ∇logψ)ᵀ at g(x)
            grad += w * psi * gb
            grad[k] += gw * psi
            if want_laplacian:
                lap += psi * (lw + 2.0 * float(gw @ gb[k])
                              + w * res["laplacian_over_psi"][slot])
            if want_grad_params:
                gpar += w * psi * res["grad_params"][slot]
        if want_grad_x:
            out["grad_x"][b] = grad / total
        if want_laplacian:
            out["laplacian_over_psi"][b] = lap / total
        if want_grad_params:
            out["grad_params"][b] = gpar / total
    return out


def sc_wavefunction(base, group, region, spec, c):
    """Single-configuration smoothed canonicalization."""
    if not isinstance(c, Configuration):
        raise TypeError("expected a Configuration")
    out = sc_evaluate_batch(base, group, region, spec, c.positions[None],
                            c.spins)
    return _eval_to_single(out)


class SymmetrizedWavefunction:
    """A base ansatz wrapped in one of the symmetrization modes.

    mode "ga": average over an ordered subset of group elements (also used
    for PA at inference).  mode "sc": smoothed canonicalization over a
    group with a fundamental region and smoothing spec (also used for PC).
    """

    __slots__ = ("base", "mode", "subset", "group", "region", "spec")

    def __init__(self, base, mode, subset=None, group=None, region=None,
                 spec=None):
        if mode == "ga":
            if not subset:
                raise ValueError("GA subset must be nonempty")
            self.subset = list(subset)
            self.group = None
            self.region = None
            self.spec = None
        elif mode == "sc":
            if group is None or region is None or spec is None:
                raise ValueError("SC needs group, region and smoothing spec")
            if region.inradius <= spec.epsilon:
                raise ValueError("region inradius must exceed epsilon")
            self.subset = None
            self.group = group
            self.region = region
            self.spec = spec
        else:
            raise ValueError(f"unknown symmetrization mode {mode!r}")
        self.base = base
        self.mode = mode

    def evaluate(self, c):
        if self.mode == "ga":
            return ga_wavefunction(self.base, self.subset, c)
        return sc_wavefunction(self.base, self.group, self.region, self.spec,
                               c)

    def evaluate_batch(self, positions, spins, **want):
        if self.mode == "ga":
            return ga_evaluate_batch(self.base, self.subset, positions,
                                     spins, **want)
        return sc_evaluate_batch(self.base, self.group, self.region,
                                 self.spec, positions, spins, **want)
