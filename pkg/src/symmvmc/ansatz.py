"""Plane-wave Slater-Jastrow wavefunctions with closed-form derivatives.

A wavefunction here is a short sum of determinant products

    psi(x) = [ sum_t w_t * det(M_up^t) * det(M_down^t) ] * J(x)

where M_s^t = B_s C_s^t mixes a fixed real plane-wave basis B_s (evaluated at
the spin-s electron positions) with a learnable coefficient matrix C_s^t, and
J is an optional symmetric pair (Jastrow) factor.  Ordinary ansatze have a
single term; the multi-term form exists so that zero-group-average
perturbations can be represented exactly (determinants are multilinear and
the basis is closed under the group action on the torus).

Everything is evaluated in the log domain with sign tracking, batched over
configurations.
"""

from typing import NamedTuple

import numpy as np

from .groups import Configuration

COND_THRESHOLD = 1e12
TWO_PI = 2.0 * np.pi


class BasisFunction(NamedTuple):
    kind: str  # "const", "cos" or "sin"
    wavevector: tuple


def plane_wave_basis(dim, cutoff):
    """Real plane-wave basis {1, cos(2πk·x), sin(2πk·x)} with |k|² ≤ cutoff².

    One representative per ±k pair (first nonzero component positive),
    ordered by (|k|², lexicographic); cos before sin for each k.  The basis
    is closed under every integer orthogonal rotation and under the
    translation mixing cos/sin at fixed k, which is what perturb_asymmetric
    relies on.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    kmax = int(np.floor(cutoff))
    ks = []
    for k in np.ndindex(*([2 * kmax + 1] * dim)):
        vec = tuple(int(c) - kmax for c in k)
        norm2 = sum(c * c for c in vec)
        if norm2 == 0 or norm2 > cutoff**2:
            continue
        nonzero = next(c for c in vec if c != 0)
        if nonzero < 0:
            continue
        ks.append((norm2, vec))
    ks.sort()
    basis = [BasisFunction("const", (0,) * dim)]
    for _, vec in ks:
        basis.append(BasisFunction("cos", vec))
        basis.append(BasisFunction("sin", vec))
    return tuple(basis)


def basis_tables(basis, x):
    """Values, gradients and diagonal second derivatives of every basis
    function at a stack of positions.

    x has shape (..., d); returns (vals (..., nb), grads (..., nb, d),
    lap2 (..., nb, d)) where lap2 holds ∂²/∂x_α² per coordinate.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    nb = len(basis)
    vals = np.empty(x.shape[:-1] + (nb,))
    grads = np.empty(x.shape[:-1] + (nb, d))
    lap2 = np.empty(x.shape[:-1] + (nb, d))
    for b, fn in enumerate(basis):
        k = TWO_PI * np.asarray(fn.wavevector, dtype=float)
        phase = x @ k
        if fn.kind == "const":
            vals[..., b] = 1.0
            grads[..., b, :] = 0.0
            lap2[..., b, :] = 0.0
        elif fn.kind == "cos":
            c, s = np.cos(phase), np.sin(phase)
            vals[..., b] = c
            grads[..., b, :] = -s[..., None] * k
            lap2[..., b, :] = -c[..., None] * k**2
        elif fn.kind == "sin":
            c, s = np.cos(phase), np.sin(phase)
            vals[..., b] = s
            grads[..., b, :] = c[..., None] * k
            lap2[..., b, :] = -s[..., None] * k**2
        else:
            raise ValueError(f"unknown basis kind {fn.kind!r}")
    return vals, grads, lap2


def basis_rotation(basis, g):
    """Matrix R with χ_b(g(x)) = Σ_b' R[b, b'] χ_b'(x), exact for integer
    orthogonal rotations.  Raises if g maps some wavevector out of the basis.
    """
    index = {}
    for i, fn in enumerate(basis):
        index[(fn.kind, fn.wavevector)] = i
    nb = len(basis)
    rot = np.zeros((nb, nb))
    a = g.rotation
    b = g.translation
    for i, fn in enumerate(basis):
        if fn.kind == "const":
            rot[i, index[("const", fn.wavevector)]] = 1.0
            continue
        k = np.asarray(fn.wavevector, dtype=float)
        # k·(Ax + b) = (Aᵀk)·x + k·b; reduce Aᵀk to its stored representative
        kp = a.T @ k
        kp_int = np.round(kp).astype(int)
        if np.max(np.abs(kp - kp_int)) > 1e-9:
            raise ValueError("rotation does not preserve the integer wavevectors")
        flip = 1.0
        vec = tuple(kp_int)
        nonzero = next((c for c in vec if c != 0), 0)
        if nonzero < 0:
            vec = tuple(-c for c in vec)
            flip = -1.0
        if ("cos", vec) not in index:
            raise ValueError(f"basis is not closed under this rotation (k={vec})")
        phase = TWO_PI * float(k @ b)
        c, s = np.cos(phase), np.sin(phase)
        if fn.kind == "cos":
            # cos(k'·x + k·b) = cos(k·b)cos(k'·x) − sin(k·b)sin(k'·x)
            rot[i, index[("cos", vec)]] += c
            rot[i, index[("sin", vec)]] += -s * flip
        else:
            rot[i, index[("sin", vec)]] += c * flip
            rot[i, index[("cos", vec)]] += s
    return rot


class WavefunctionEval(NamedTuple):
    """One wavefunction evaluation: log|ψ|, sign, and log-derivatives.

    grad_x is ∂log|ψ|/∂x with shape (n, d); laplacian_over_psi is Δψ/ψ;
    grad_params is ∂log|ψ|/∂θ.  At a node sign is 0, log_abs is −inf and the
    derivative fields are None.
    """

    log_abs: float
    sign: float
    grad_x: object = None
    laplacian_over_psi: float = None
    grad_params: object = None

    @property
    def is_node(self):
        return self.sign == 0


def node_eval():
    return WavefunctionEval(-np.inf, 0.0)


class Ansatz:
    """Immutable snapshot of wavefunction structure plus parameters.

    coeff_up / coeff_down have shape (terms, n_basis, n_spin); term_weights
    are fixed structural weights (not trained).  Trainable parameters are the
    coefficient entries plus, if enabled, the two Jastrow parameters
    (amplitude, width): log J = Σ_{i<j} amp · exp(−width² q_ij) with
    q_ij = Σ_α sin²(π(x_i − x_j)_α), a smooth periodic pair well that is
    invariant under every signed-permutation isometry.
    """

    __slots__ = ("basis", "n_up", "n_down", "coeff_up", "coeff_down",
                 "term_weights", "jastrow", "jastrow_params")

    def __init__(self, basis, n_up, n_down, coeff_up, coeff_down,
                 term_weights=None, jastrow=False, jastrow_params=(0.0, 1.0)):
        self.basis = tuple(basis)
        nb = len(self.basis)
        self.n_up = int(n_up)
        self.n_down = int(n_down)
        coeff_up = np.array(coeff_up, dtype=float)
        coeff_down = np.array(coeff_down, dtype=float)
        if coeff_up.ndim == 2:
            coeff_up = coeff_up[None]
        if coeff_down.ndim == 2:
            coeff_down = coeff_down[None]
        t = coeff_up.shape[0] if coeff_up.ndim == 3 else 0
        if coeff_up.shape != (t, nb, self.n_up):
            raise ValueError(
                f"coeff_up shape {coeff_up.shape} != {(t, nb, self.n_up)}; "
                "orbital count per spin sector must equal its electron count"
            )
        if coeff_down.shape != (t, nb, self.n_down):
            raise ValueError(
                f"coeff_down shape {coeff_down.shape} != {(t, nb, self.n_down)}"
            )
        if term_weights is None:
            term_weights = np.ones(t)
        term_weights = np.array(term_weights, dtype=float)
        if term_weights.shape != (t,):
            raise ValueError("term_weights must match the number of terms")
        jastrow_params = np.array(jastrow_params, dtype=float)
        if jastrow_params.shape != (2,):
            raise ValueError("jastrow_params must be (amplitude, width)")
        for arr in (coeff_up, coeff_down, term_weights, jastrow_params):
            arr.flags.writeable = False
        self.coeff_up = coeff_up
        self.coeff_down = coeff_down
        self.term_weights = term_weights
        self.jastrow = bool(jastrow)
        self.jastrow_params = jastrow_params

    @property
    def n_terms(self):
        return self.coeff_up.shape[0]

    @property
    def n_electrons(self):
        return self.n_up + self.n_down

    @property
    def dim(self):
        return len(self.basis[0].wavevector)

    @property
    def n_params(self):
        q = self.coeff_up.size + self.coeff_down.size
        return q + 2 if self.jastrow else q

    @property
    def params(self):
        parts = [self.coeff_up.ravel(), self.coeff_down.ravel()]
        if self.jastrow:
            parts.append(self.jastrow_params)
        return np.concatenate(parts)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        nu = self.coeff_up.size
        nd = self.coeff_down.size
        cu = theta[:nu].reshape(self.coeff_up.shape)
        cd = theta[nu:nu + nd].reshape(self.coeff_down.shape)
        jp = theta[nu + nd:] if self.jastrow else self.jastrow_params
        return Ansatz(self.basis, self.n_up, self.n_down, cu, cd,
                      self.term_weights, self.jastrow, jp)

    def spin_slices(self, spins):
        spins = np.asarray(spins)
        up = np.flatnonzero(spins == 1)
        down = np.flatnonzero(spins == -1)
        if len(up) != self.n_up or len(down) != self.n_down:
            raise ValueError(
                f"configuration has {len(up)} up / {len(down)} down electrons; "
                f"ansatz expects {self.n_up} / {self.n_down}"
            )
        return up, down

    def __repr__(self):
        return (f"Ansatz(dim={self.dim}, n_up={self.n_up}, n_down={self.n_down}, "
                f"terms={self.n_terms}, basis={len(self.basis)}, jastrow={self.jastrow})")


def initial_ansatz(dim, cutoff, n_up, n_down, jastrow=False, seed=0, noise=0.1):
    """Starting point for training: lowest-index basis functions per orbital
    plus small Gaussian noise on all coefficients."""
    basis = plane_wave_basis(dim, cutoff)
    nb = len(basis)
    if max(n_up, n_down) > nb:
        raise ValueError("basis too small for the requested electron counts")
    rng = np.random.default_rng(seed)
    cu = np.eye(nb, n_up)[None] + noise * rng.standard_normal((1, nb, n_up))
    cd = np.eye(nb, n_down)[None] + noise * rng.standard_normal((1, nb, n_down))
    return Ansatz(basis, n_up, n_down, cu, cd, jastrow=jastrow)


def _jastrow_terms(x, amp, width):
    """log J and its batched derivatives for the periodic pair well.

    x: (batch, n, d).  Returns (logj (B,), grad (B,n,d), d2sum (B,),
    d_amp (B,), d_width (B,)) where d2sum = Σ_{iα} ∂²logJ.
    """
    b, n, d = x.shape
    logj = np.zeros(b)
    grad = np.zeros((b, n, d))
    d2sum = np.zeros(b)
    d_amp = np.zeros(b)
    d_width = np.zeros(b)
    w2 = width * width
    for i in range(n):
        for j in range(i + 1, n):
            delta = x[:, i, :] - x[:, j, :]
            sp = np.sin(np.pi * delta)
            q = np.sum(sp * sp, axis=-1)
            e = np.exp(-w2 * q)
            u = amp * e
            logj += u
            d_amp += e
            d_width += -2.0 * width * q * u
            # ∂q/∂x_iα = π sin(2π δ_α), ∂²q/∂x_iα² = 2π² cos(2π δ_α)
            dq = np.pi * np.sin(TWO_PI * delta)
            d2q = 2.0 * np.pi**2 * np.cos(TWO_PI * delta)
            du = -w2 * u[:, None] * dq
            grad[:, i, :] += du
            grad[:, j, :] -= du
            d2u = u[:, None] * (w2 * w2 * dq * dq - w2 * d2q)
            d2sum += 2.0 * np.sum(d2u, axis=-1)  # i and j contribute equally
    return logj, grad, d2sum, d_amp, d_width


def _signed_logsum(log_vals, signs, weights, axis):
    """log|Σ w s e^L| and the sign, stable against overflow."""
    finite = np.isfinite(log_vals)
    m = np.max(np.where(finite, log_vals, -np.inf), axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    scaled = np.where(finite, np.exp(log_vals - m_safe), 0.0)
    total = np.sum(weights * signs * scaled, axis=axis)
    sign = np.sign(total)
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(total)) + np.squeeze(m_safe, axis=axis)
    log_abs = np.where(sign == 0, -np.inf, log_abs)
    return log_abs, sign, m_safe, total


def evaluate_batch(ansatz, positions, spins, want_grad_x=True,
                   want_laplacian=True, want_grad_params=True):
    """Evaluate the ansatz on a batch of configurations.

    positions: (batch, n, d); spins: (n,) with +1/−1 entries shared across
    the batch.  Returns a dict with log_abs (B,), sign (B,) and, when
    requested, grad_x (B,n,d), laplacian_over_psi (B,), grad_params (B,q).
    Nodes (singular or beyond-condition-threshold orbital matrices, or exact
    cancellation of the term sum) get sign 0, log_abs −inf, and NaN in the
    derivative slots.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim != 3:
        raise ValueError("positions must have shape (batch, n, d)")
    bsz, n, d = x.shape
    if n != ansatz.n_electrons or d != ansatz.dim:
        raise ValueError(
            f"positions have n={n}, d={d}; ansatz expects "
            f"n={ansatz.n_electrons}, d={ansatz.dim}"
        )
    up, down = ansatz.spin_slices(spins)
    nt = ansatz.n_terms
    sectors = [(up, ansatz.coeff_up), (down, ansatz.coeff_down)]

    term_log = np.zeros((bsz, nt))
    term_sign = np.ones((bsz, nt))
    bad = np.zeros(bsz, dtype=bool)
    # per-term log-derivative pieces, assembled sector by sector
    tgrad = np.zeros((bsz, nt, n, d)) if (want_grad_x or want_laplacian) else None
    tlap = np.zeros((bsz, nt)) if want_laplacian else None
    tpgrad = np.zeros((bsz, nt, ansatz.coeff_up.size + ansatz.coeff_down.size)) \
        if want_grad_params else None
    poffset = 0

    for idx, coeff in sectors:
        ns = len(idx)
        nb = len(ansatz.basis)
        if ns == 0:
            continue
        xs = x[:, idx, :]
        b0, b1, b2 = basis_tables(ansatz.basis, xs)  # (B,ns,nb), (B,ns,nb,d) x2
        bscale = np.linalg.norm(b0, axis=(1, 2))  # (B,)
        for t in range(nt):
            m = b0 @ coeff[t]  # (B, ns, ns)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                sign_t, logdet_t = np.linalg.slogdet(m)
                sv = np.linalg.svd(m, compute_uv=False)
                cond = sv[:, 0] / sv[:, -1]
            # cond is blind to absolute smallness (a 1×1 matrix always has
            # cond 1), so also flag σ_min tiny relative to the basis and
            # coefficient scale: that means the orbitals themselves nearly
            # vanish, i.e. the configuration sits on a node
            floor = 1e-12 * bscale * np.linalg.norm(coeff[t])
            sing = ((sign_t == 0) | ~np.isfinite(logdet_t)
                    | (cond > COND_THRESHOLD) | (sv[:, -1] <= floor))
            bad |= sing
            ok = ~sing
            term_log[:, t] += np.where(ok, logdet_t, -np.inf)
            term_sign[:, t] *= np.where(ok, sign_t, 0.0)
            if not (want_grad_x or want_laplacian or want_grad_params):
                continue
            minv = np.empty_like(m)
            if np.any(ok):
                minv[ok] = np.linalg.inv(m[ok])
            minv[sing] = np.nan
            kcol = np.transpose(minv, (0, 2, 1))  # kcol[b, i, :] = K[:, i]
            if want_grad_x or want_laplacian:
                # ∂log det/∂x_iα = (B1[i]·C)·K[:,i]
                oc1 = np.einsum("bnkd,kj->bnjd", b1, coeff[t])
                g1 = np.einsum("bnjd,bnj->bnd", oc1, kcol)
                tgrad[:, t, idx, :] += g1
                if want_laplacian:
                    # Δdet/det = Σ_{iα} (B2[i]·C)·K[:,i]; the ∂²log and
                    # (∂log)² pieces cancel against each other exactly
                    oc2 = np.einsum("bnkd,kj->bnjd", b2, coeff[t])
                    g2 = np.einsum("bnjd,bnj->bnd", oc2, kcol)
                    tlap[:, t] += np.sum(g2, axis=(1, 2))
            if want_grad_params:
                # ∂log det/∂C[b,j] = (K B0)[j, b]; term t owns its own block
                kb = minv @ b0  # (B, ns, nb)
                lo = poffset + t * nb * ns
                tpgrad[:, t, lo:lo + nb * ns] = \
                    np.transpose(kb, (0, 2, 1)).reshape(bsz, nb * ns)
        poffset += coeff.size

    log_abs, sign, m_safe, total = _signed_logsum(
        term_log, term_sign, ansatz.term_weights[None, :], axis=1
    )
    node = bad | (sign == 0)
    if ansatz.jastrow:
        amp, width = ansatz.jastrow_params
        logj, gj, d2j, d_amp, d_width = _jastrow_terms(x, amp, width)
        log_abs = log_abs + logj
    else:
        gj = None
    out = {"log_abs": np.where(node, -np.inf, log_abs),
           "sign": np.where(node, 0.0, sign)}
    if not (want_grad_x or want_laplacian or want_grad_params):
        return out

    # signed ratio weights r_t = w_t ψ_t / Σ w_t ψ_t
    with np.errstate(invalid="ignore"):
        contrib = ansatz.term_weights[None, :] * term_sign * \
            np.where(np.isfinite(term_log), np.exp(term_log - m_safe), 0.0)
        ratio = contrib / np.where(total == 0.0, np.nan, total)[:, None]

    grad_det = np.einsum("bt,btnd->bnd", ratio, tgrad) if tgrad is not None else None
    if want_laplacian:
        # tlap already holds Δψ_t/ψ_t per term (sectors act on disjoint
        # electrons, so sector contributions just add)
        lap_det = np.einsum("bt,bt->b", ratio, tlap)

    if want_grad_x:
        g = grad_det if gj is None else grad_det + gj
        g = np.where(node[:, None, None], np.nan, g)
        out["grad_x"] = g
    if want_laplacian:
        if gj is None:
            lap = lap_det
        else:
            cross = 2.0 * np.sum(grad_det * gj, axis=(1, 2))
            jlap = d2j + np.sum(gj * gj, axis=(1, 2))
            lap = lap_det + cross + jlap
        out["laplacian_over_psi"] = np.where(node, np.nan, lap)
    if want_grad_params:
        gp = np.einsum("bt,btq->bq", ratio, tpgrad)
        if ansatz.jastrow:
            gp = np.concatenate([gp, d_amp[:, None], d_width[:, None]], axis=1)
        out["grad_params"] = np.where(node[:, None], np.nan, gp)
    return out


def evaluate(ansatz, c):
    """Single-configuration evaluation returning a WavefunctionEval."""
    if not isinstance(c, Configuration):
        raise TypeError("expected a Configuration")
    res = evaluate_batch(ansatz, c.positions[None], c.spins)
    if res["sign"][0] == 0:
        return node_eval()
    return WavefunctionEval(
        float(res["log_abs"][0]),
        float(res["sign"][0]),
        res["grad_x"][0],
        float(res["laplacian_over_psi"][0]),
        res["grad_params"][0],
    )


def perturb_asymmetric(ansatz, group, magnitude, seed=0):
    """Add a perturbation whose diagonal group average is identically zero.

    With φ a noise-shifted copy of the base, the returned wavefunction is
    ψ + m(φ − (1/|G|) Σ_g φ∘g), realized exactly as extra determinant terms:
    φ∘g has coefficients R_gᵀ C^φ because the plane-wave basis is closed
    under the group action.  Averaging the result over the group therefore
    reproduces the averaged base wavefunction.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be nonnegative")
    if ansatz.n_terms != 1:
        raise ValueError("perturb_asymmetric expects a single-term base ansatz")
    if magnitude == 0:
        return ansatz
    rng = np.random.default_rng(seed)
    nb = len(ansatz.basis)
    phi_up = ansatz.coeff_up[0] + rng.standard_normal((nb, ansatz.n_up))
    phi_down = ansatz.coeff_down[0] + rng.standard_normal((nb, ansatz.n_down))
    rots = [basis_rotation(ansatz.basis, g) for g in group]
    cu = [ansatz.coeff_up[0], phi_up] + [r.T @ phi_up for r in rots]
    cd = [ansatz.coeff_down[0], phi_down] + [r.T @ phi_down for r in rots]
    weights = [1.0, magnitude] + [-magnitude / len(group)] * len(group)
    return Ansatz(
        ansatz.basis, ansatz.n_up, ansatz.n_down,
        np.stack(cu), np.stack(cd), np.array(weights),
        ansatz.jastrow, ansatz.jastrow_params,
    )
