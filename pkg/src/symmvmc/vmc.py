"""Hamiltonian, local energy, Metropolis sampling and first-order updates.

Positions live on the unit torus in lattice coordinates; the physical cell
has side `scale` (L), so the kinetic term carries a 1/L² and the potential
measures physical distances L·u.  The external potential is a sum of
Gaussian wells at fixed sites, summed over periodic images within r_cut
cells of the minimum image; the optional interaction is a smooth periodic
pair repulsion.  Both are invariant under the declared symmetry group,
which is certified numerically rather than assumed.

Sampling targets |ψ|² with an all-electron Gaussian random walk.  Every
chain owns the RNG stream derived from (seed, chain index) and draws in a
fixed order (initial position, then per-segment displacement block, then
per-segment acceptance block), so batches are reproducible bit for bit
regardless of how chains are scheduled.

The four update estimators share one gradient kernel
    F(x) = 2 · (E_local(x) − baseline) · ∂_θ log|ψ(x)|
with the per-batch mean of E_local as baseline; they differ only in what
they sample (the base density or a group-averaged one) and in how samples
are augmented.  Training is plain SGD with step decay; the per-step cost
columns report deterministic evaluation counts rather than wall time so
that reruns under the same seed produce identical traces.
"""

import hashlib
import json
import math
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .ansatz import Ansatz, evaluate_batch as _ansatz_evaluate_batch, \
    plane_wave_basis
from .groups import Configuration, torus_delta
from .symmetrize import SymmetrizedWavefunction, gas_subsample

DEFAULT_R_CUT = 3
DEFAULT_BURN_IN = 50
DEFAULT_STEP_SIZE = 0.25
CHECKPOINT_FORMAT = "flat-float64-v1"


class Hamiltonian:
    """Immutable system description.

    sites: (n_sites, dim) well centers in lattice coordinates.
    depth: well depth V0 ≥ 0 (potential −V0 at a site, Gaussian falloff).
    sigma: well width in physical units.
    scale: physical length L of one lattice unit.
    lambda_int: strength of the soft pair repulsion (0 = non-interacting).
    v_offset: constant added to the potential (shifts the spectrum exactly).
    """

    __slots__ = ("dim", "sites", "depth", "sigma", "r_cut", "lambda_int",
                 "scale", "v_offset", "_images")

    def __init__(self, dim, sites, depth, sigma, scale,
                 lambda_int=0.0, r_cut=DEFAULT_R_CUT, v_offset=0.0):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dim must be ≥ 1")
        sites = np.asarray(sites, dtype=float).reshape(-1, self.dim)
        sites = sites % 1.0
        sites.flags.writeable = False
        self.sites = sites
        self.depth = float(depth)
        self.sigma = float(sigma)
        self.scale = float(scale)
        self.lambda_int = float(lambda_int)
        self.r_cut = int(r_cut)
        self.v_offset = float(v_offset)
        if self.depth < 0 or self.sigma <= 0 or self.scale <= 0:
            raise ValueError("depth must be ≥ 0; sigma and scale must be > 0")
        if self.lambda_int < 0:
            raise ValueError("lambda_int must be ≥ 0")
        if self.r_cut < 1:
            raise ValueError("r_cut must be ≥ 1")
        shifts = np.arange(-self.r_cut, self.r_cut + 1, dtype=float)
        grids = np.meshgrid(*([shifts] * self.dim), indexing="ij")
        images = np.stack([g.ravel() for g in grids], axis=-1)
        images.flags.writeable = False
        self._images = images  # ((2 r_cut + 1)^d, d)

    @property
    def interacting(self):
        return self.lambda_int != 0.0

    def __repr__(self):
        return (f"Hamiltonian(dim={self.dim}, sites={len(self.sites)}, "
                f"depth={self.depth}, sigma={self.sigma}, scale={self.scale}, "
                f"lambda_int={self.lambda_int})")


def external_potential(h, positions):
    """Σ_i Σ_I −V0 exp(−‖L(x_i − r_I + n)‖²/2σ²) over images ‖n‖∞ ≤ r_cut.

    positions: (..., n, d); returns (...,).  The image sum starts from the
    minimum image, so the truncated sum is periodic and smooth to far below
    any tolerance used here.
    """
    x = np.asarray(positions, dtype=float)
    out = np.zeros(x.shape[:-2])
    if len(h.sites) == 0 or h.depth == 0.0:
        return out + h.v_offset
    # (..., n, n_sites, d)
    delta = torus_delta(h.sites, x[..., :, None, :])
    # (..., n, n_sites, n_images)
    dist2 = np.sum((delta[..., None, :] + h._images) ** 2, axis=-1)
    a = h.scale**2 / (2.0 * h.sigma**2)
    wells = -h.depth * np.exp(-a * dist2)
    return np.sum(wells, axis=(-3, -2, -1)) + h.v_offset


def pair_potential(h, positions):
    """λ_int Σ_{i<j} Π_α (1 + cos(2π δ_α))/2 with δ = x_i − x_j.

    A smooth periodic repulsion peaking at coincidence; invariant under
    every signed-permutation isometry.
    """
    x = np.asarray(positions, dtype=float)
    n = x.shape[-2]
    out = np.zeros(x.shape[:-2])
    if h.lambda_int == 0.0 or n < 2:
        return out
    iu, ju = np.triu_indices(n, k=1)
    delta = x[..., iu, :] - x[..., ju, :]
    kernel = np.prod((1.0 + np.cos(2.0 * np.pi * delta)) / 2.0, axis=-1)
    return h.lambda_int * np.sum(kernel, axis=-1)


def potential(h, positions):
    return external_potential(h, positions) + pair_potential(h, positions)


def local_energy_batch(h, laplacian_over_psi, positions):
    """E_local = −(1/2L²)·Δψ/ψ + V, elementwise over a batch."""
    return (-0.5 / h.scale**2) * np.asarray(laplacian_over_psi) \
        + potential(h, positions)


def local_energy(h, psi, c):
    """Single-configuration local energy; psi is evaluate-like.

    Raises at nodes: the local energy is undefined there.
    """
    res = psi(c)
    if res.sign == 0:
        raise ValueError("local energy undefined at a node")
    return float(local_energy_batch(h, res.laplacian_over_psi,
                                    c.positions[None])[0])


def certify_potential_invariance(h, group, n_electrons, n_checks=1000,
                                 seed=0, tol=1e-9):
    """max |V(g(x)) − V(x)| over random configurations and all g.

    Returns the measured maximum; raises if it exceeds tol.  This is the
    numeric certificate that the declared group actually leaves the
    potential invariant.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n_checks, n_electrons, h.dim))
    base = potential(h, x)
    worst = 0.0
    for g in group:
        gx = g.apply(x) % 1.0
        worst = max(worst, float(np.max(np.abs(potential(h, gx) - base))))
    if worst > tol:
        raise ValueError(
            f"potential is not invariant under the declared group: "
            f"max deviation {worst:.3e} > {tol:.1e}"
        )
    return worst


# --- wavefunction plumbing --------------------------------------------------

def child_seed(seed, name):
    """Stable 64-bit stream seed derived from (seed, name) by hashing.

    Independent consumers of randomness (sampler chains, augmentation draws,
    subset draws) each get their own stream so that adding draws to one
    never perturbs another.
    """
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def resolve_base(psi):
    """Unwrap symmetrization layers down to the object that knows the
    electron counts and dimension."""
    obj = psi
    while isinstance(obj, SymmetrizedWavefunction):
        obj = obj.base
    return obj


def canonical_spins(psi):
    """Spin labels in the fixed order: all up electrons first, then down."""
    base = resolve_base(psi)
    return np.array([1] * base.n_up + [-1] * base.n_down, dtype=np.int8)


def eval_psi_batch(psi, positions, spins, **want):
    """Evaluate an ansatz or a symmetrized wrapper on (batch, n, d)."""
    method = getattr(psi, "evaluate_batch", None)
    if method is not None:
        return method(positions, spins, **want)
    return _ansatz_evaluate_batch(psi, positions, spins, **want)


def branch_factor(psi):
    """Single-configuration evaluations of the underlying ansatz needed per
    evaluation of psi; the unit of the C_samp / C_grad cost proxies."""
    if isinstance(psi, SymmetrizedWavefunction):
        if psi.mode == "ga":
            return len(psi.subset)
        return len(psi.group)
    return 1


# --- Metropolis sampling ----------------------------------------------------

def acceptance_probability(log_sq_from, log_sq_to):
    """min(1, exp(log|ψ(y)|² − log|ψ(x)|²)); proposals into nodes never
    accepted, proposals out of a node always accepted."""
    if not log_sq_to > -np.inf:
        return 0.0
    delta = min(float(log_sq_to) - float(log_sq_from), 0.0)
    return float(np.exp(delta))


class ChainState:
    """One Metropolis chain: current configuration, cached log|ψ|², the
    chain's private RNG stream, and acceptance counters.

    The cached value always equals 2·log|ψ| at the current configuration;
    −inf marks a chain sitting at a node (possible only before its first
    accepted move, since proposals into nodes are rejected).
    """

    __slots__ = ("configuration", "log_sq", "rng", "accepted", "proposed")

    def __init__(self, configuration, log_sq, rng, accepted=0, proposed=0):
        self.configuration = configuration
        self.log_sq = float(log_sq)
        self.rng = rng
        self.accepted = int(accepted)
        self.proposed = int(proposed)

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else 1.0


def initial_chain_state(psi, seed, spins=None, start=None):
    """Fresh chain: position uniform on the torus from the chain's own
    stream (unless given), cache filled by one evaluation."""
    base = resolve_base(psi)
    if spins is None:
        spins = canonical_spins(psi)
    rng = np.random.default_rng(seed)
    if start is None:
        start = rng.random((base.n_up + base.n_down, base.dim))
    c = Configuration(start, spins)
    res = eval_psi_batch(psi, c.positions[None], c.spins,
                         want_grad_x=False, want_laplacian=False,
                         want_grad_params=False)
    return ChainState(c, 2.0 * float(res["log_abs"][0]), rng)


def _advance(psi, spins, positions, log_sq, rngs, n_steps, step_size):
    """Advance all chains n_steps in lockstep, mutating positions/log_sq.

    Each chain pre-draws its displacement block and then its acceptance
    block for the whole segment, so the stream consumption per chain is a
    function of (n_steps, n, d) only.  Returns (accepted, proposed).
    """
    n_chains, n, d = positions.shape
    if n_steps == 0:
        return 0, 0
    normals = np.empty((n_chains, n_steps, n, d))
    uniforms = np.empty((n_chains, n_steps))
    for i, rng in enumerate(rngs):
        normals[i] = rng.normal(0.0, 1.0, size=(n_steps, n, d))
        uniforms[i] = rng.random(n_steps)
    accepted = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_u = np.log(uniforms)
    for t in range(n_steps):
        prop = (positions + step_size * normals[:, t]) % 1.0
        prop = np.where(prop >= 1.0, prop - 1.0, prop)
        res = eval_psi_batch(psi, prop, spins, want_grad_x=False,
                             want_laplacian=False, want_grad_params=False)
        new_log = 2.0 * np.asarray(res["log_abs"], dtype=float)
        with np.errstate(invalid="ignore"):
            accept = log_u[:, t] < new_log - log_sq
        positions[accept] = prop[accept]
        log_sq[accept] = new_log[accept]
        accepted += int(np.count_nonzero(accept))
    return accepted, n_chains * n_steps


def metropolis_step(psi, state, step_size):
    """One proposal/acceptance round on a single chain (in place).

    All electrons move at once by a Gaussian displacement with
    per-coordinate standard deviation step_size, wrapped onto the torus.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    c = state.configuration
    positions = c.positions[None].copy()
    log_sq = np.array([state.log_sq])
    accepted, proposed = _advance(psi, c.spins, positions, log_sq,
                                  [state.rng], 1, float(step_size))
    if accepted:
        state.configuration = Configuration(positions[0], c.spins)
        state.log_sq = float(log_sq[0])
    state.accepted += accepted
    state.proposed += proposed
    return state


def _escape_nodes(psi, spins, positions, log_sq, rngs, step_size,
                  max_rounds=200):
    """Push any chain sitting at a node until it lands somewhere live.

    Returns the number of skipped node samples.  Normally zero: only a
    chain whose initial position is a node can be nodal, and it escapes on
    its first non-node proposal.
    """
    skipped = 0
    for _ in range(max_rounds):
        bad = np.flatnonzero(~(log_sq > -np.inf))
        if len(bad) == 0:
            return skipped
        skipped += len(bad)
        sub_pos = positions[bad]
        sub_log = log_sq[bad]
        _advance(psi, spins, sub_pos, sub_log, [rngs[i] for i in bad],
                 1, step_size)
        positions[bad] = sub_pos
        log_sq[bad] = sub_log
    raise RuntimeError(
        f"{len(bad)} chains could not leave a node in {max_rounds} attempts; "
        "the wavefunction may vanish on an open region"
    )


class SampleBatch:
    """Harvested configurations plus the sampling diagnostics that the
    metrics need (acceptance rate, node resample count).

    positions has shape (n_samples, n, d) in chain-major order: all draws
    of chain 0 first, then chain 1, and so on, so contiguous blocks respect
    the autocorrelation structure.
    """

    __slots__ = ("positions", "spins", "acceptance", "node_resamples")

    def __init__(self, positions, spins, acceptance, node_resamples):
        positions = np.asarray(positions, dtype=float)
        spins = np.asarray(spins, dtype=np.int8)
        positions.flags.writeable = False
        spins.flags.writeable = False
        self.positions = positions
        self.spins = spins
        self.acceptance = float(acceptance)
        self.node_resamples = int(node_resamples)

    def __len__(self):
        return len(self.positions)

    def __iter__(self):
        return (Configuration(p, self.spins) for p in self.positions)

    def configurations(self):
        return list(self)

    def __repr__(self):
        return (f"SampleBatch(n={len(self)}, acceptance="
                f"{self.acceptance:.3f}, node_resamples={self.node_resamples})")


def sample_batch(psi, n_chains, chain_length, burn_in, step_size, seed,
                 thin=0, spins=None):
    """Run n_chains independent Metropolis chains and harvest configurations.

    With thin = 0 (training mode) each chain contributes its final state
    after burn_in + chain_length steps; chain_length = burn_in = 0 returns
    the initial configurations.  With thin = t > 0 (inference mode) each
    chain is harvested every t-th step after burn-in, chain_length // t
    times.  Chains are deterministic functions of (seed, chain index);
    harvested nodes are stepped further and counted, never returned.
    """
    n_chains = int(n_chains)
    chain_length = int(chain_length)
    burn_in = int(burn_in)
    thin = int(thin)
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    if chain_length < 0 or burn_in < 0:
        raise ValueError("chain_length and burn_in must be nonnegative")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if thin < 0 or (thin > 0 and thin > chain_length):
        raise ValueError("thin must be between 0 and chain_length")
    if spins is None:
        spins = canonical_spins(psi)
    spins = np.asarray(spins, dtype=np.int8)
    base = resolve_base(psi)
    n = base.n_up + base.n_down
    d = base.dim
    if len(spins) != n:
        raise ValueError(f"expected {n} spin labels, got {len(spins)}")

    root = int(seed)
    rngs = [np.random.default_rng([root, i]) for i in range(n_chains)]
    positions = np.stack([rng.random((n, d)) for rng in rngs])
    res = eval_psi_batch(psi, positions, spins, want_grad_x=False,
                         want_laplacian=False, want_grad_params=False)
    log_sq = 2.0 * np.asarray(res["log_abs"], dtype=float)

    step_size = float(step_size)
    total_steps = burn_in + chain_length
    node_resamples = 0
    _advance(psi, spins, positions, log_sq, rngs, burn_in, step_size)

    harvests = []
    accepted = proposed = 0
    if thin == 0:
        a, p = _advance(psi, spins, positions, log_sq, rngs, chain_length,
                        step_size)
        accepted += a
        proposed += p
        if total_steps > 0:
            node_resamples += _escape_nodes(psi, spins, positions, log_sq,
                                            rngs, step_size)
        harvests.append(positions.copy())
    else:
        done = 0
        while done + thin <= chain_length:
            a, p = _advance(psi, spins, positions, log_sq, rngs, thin,
                            step_size)
            accepted += a
            proposed += p
            done += thin
            node_resamples += _escape_nodes(psi, spins, positions, log_sq,
                                            rngs, step_size)
            harvests.append(positions.copy())
        a, p = _advance(psi, spins, positions, log_sq, rngs,
                        chain_length - done, step_size)
        accepted += a
        proposed += p
    if proposed == 0:
        acceptance = 1.0
    else:
        acceptance = accepted / proposed
    # (events, chains, n, d) -> chain-major (chains * events, n, d)
    stacked = np.stack(harvests, axis=0)
    flat = stacked.transpose(1, 0, 2, 3).reshape(-1, n, d)
    return SampleBatch(flat, spins, acceptance, node_resamples)


# --- gradient estimator and parameter updates -------------------------------

class UpdateEstimate(NamedTuple):
    """One stochastic parameter update and its per-batch diagnostics."""

    delta_theta: np.ndarray
    method: str           # "OG" | "DA" | "GA" | "GAs"
    n_samples: int        # N, total F terms in the mean
    k: int                # augmentation / subset / cost factor
    chain_length: int     # m, post-burn-in steps per chain
    energy: float         # per-batch mean of E_local (the F baseline)
    stderr: float
    variance: float       # Var[E_local] over the batch
    acceptance: float
    node_drops: int
    n_evals_sample: int   # C_samp proxy: base evaluations spent sampling
    n_evals_grad: int     # C_grad proxy: base evaluations with derivatives


def grad_estimator_F(h, psi, c, baseline):
    """Per-sample gradient contribution 2·(E_local − baseline)·∂θ log|ψ|."""
    res = eval_psi_batch(psi, c.positions[None], c.spins, want_grad_x=False,
                         want_laplacian=True, want_grad_params=True)
    if res["sign"][0] == 0:
        raise ValueError("gradient estimator undefined at a node")
    el = local_energy_batch(h, res["laplacian_over_psi"], c.positions[None])[0]
    return 2.0 * (float(el) - float(baseline)) * res["grad_params"][0]


def _batch_means_stderr(values, max_blocks=32):
    """Standard error of the mean via batch means over contiguous blocks."""
    values = np.asarray(values, dtype=float)
    blocks = min(max_blocks, len(values))
    if blocks < 2:
        return float("nan")
    means = np.array([chunk.mean() for chunk in np.array_split(values, blocks)])
    return float(means.std(ddof=1) / np.sqrt(blocks))


def _gradient_mean(h, psi, positions, spins):
    """Mean of F plus energy statistics over a batch of configurations.

    Node rows (possible for augmented configurations even when originals
    are live) are dropped from both the baseline and the mean, and counted.
    """
    res = eval_psi_batch(psi, positions, spins, want_grad_x=False,
                         want_laplacian=True, want_grad_params=True)
    live = res["sign"] != 0
    n_live = int(np.count_nonzero(live))
    if n_live == 0:
        raise RuntimeError("every sample in the batch is a node")
    el = local_energy_batch(h, res["laplacian_over_psi"], positions)
    el_live = el[live]
    baseline = float(el_live.mean())
    weighted = 2.0 * (el[live] - baseline)[:, None] * res["grad_params"][live]
    delta = weighted.mean(axis=0)
    if not np.all(np.isfinite(delta)):
        raise RuntimeError("gradient estimate has non-finite entries")
    variance = float(el_live.var(ddof=1)) if n_live > 1 else 0.0
    stderr = _batch_means_stderr(el_live)
    drops = len(positions) - n_live
    return delta, baseline, stderr, variance, drops


def _sampling_cost(psi, n_chains, chain_length, burn_in, node_resamples):
    evals = n_chains * (burn_in + chain_length + 1) + node_resamples
    return branch_factor(psi) * evals


def update_og(h, base, group, n_samples, k, chain_length,
              burn_in=DEFAULT_BURN_IN, step_size=DEFAULT_STEP_SIZE, seed=0):
    """Unsymmetrized estimate: N fresh samples of the base density, mean
    of F on the base wavefunction.  group and k are accepted for signature
    uniformity and ignored."""
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    batch = sample_batch(base, n_samples, chain_length, burn_in, step_size,
                         child_seed(seed, "sampler"))
    delta, energy, stderr, variance, drops = _gradient_mean(
        h, base, batch.positions, batch.spins)
    return UpdateEstimate(
        delta, "OG", n_samples, 1, int(chain_length), energy, stderr,
        variance, batch.acceptance, drops + batch.node_resamples,
        _sampling_cost(base, n_samples, chain_length, burn_in,
                       batch.node_resamples),
        len(batch))


def update_da(h, base, group, n_samples, k, chain_length,
              burn_in=DEFAULT_BURN_IN, step_size=DEFAULT_STEP_SIZE, seed=0):
    """Data augmentation: N/k base samples, each expanded by k i.i.d.
    uniform group draws; mean of F on the base wavefunction over all N
    augmented terms."""
    n_samples = int(n_samples)
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_samples % k != 0:
        raise ValueError(f"n_samples = {n_samples} is not divisible by k = {k}")
    n_base = n_samples // k
    batch = sample_batch(base, n_base, chain_length, burn_in, step_size,
                         child_seed(seed, "sampler"))
    draw_rng = np.random.default_rng(child_seed(seed, "da-draws"))
    idx = draw_rng.integers(0, len(group), size=(n_base, k))

    n, d = batch.positions.shape[1:]
    expanded = np.broadcast_to(batch.positions[:, None],
                               (n_base, k, n, d))
    augmented = np.empty((n_base, k, n, d))
    for j, g in enumerate(group):
        sel = idx == j
        if not sel.any():
            continue
        moved = g.apply(expanded[sel]) % 1.0
        augmented[sel] = np.where(moved >= 1.0, moved - 1.0, moved)
    flat = augmented.reshape(n_samples, n, d)
    delta, energy, stderr, variance, drops = _gradient_mean(
        h, base, flat, batch.spins)
    return UpdateEstimate(
        delta, "DA", n_samples, k, int(chain_length), energy, stderr,
        variance, batch.acceptance, drops + batch.node_resamples,
        _sampling_cost(base, n_base, chain_length, burn_in,
                       batch.node_resamples),
        n_samples)


def update_ga(h, base, subset, n_samples, k, chain_length,
              burn_in=DEFAULT_BURN_IN, step_size=DEFAULT_STEP_SIZE, seed=0):
    """Group averaging: N/k samples drawn from the averaged wavefunction's
    own density, F evaluated on the averaged wavefunction."""
    n_samples = int(n_samples)
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_samples % k != 0:
        raise ValueError(f"n_samples = {n_samples} is not divisible by k = {k}")
    psi = SymmetrizedWavefunction(base, "ga", subset=list(subset))
    n_draws = n_samples // k
    batch = sample_batch(psi, n_draws, chain_length, burn_in, step_size,
                         child_seed(seed, "sampler"))
    delta, energy, stderr, variance, drops = _gradient_mean(
        h, psi, batch.positions, batch.spins)
    return UpdateEstimate(
        delta, "GA", n_samples, k, int(chain_length), energy, stderr,
        variance, batch.acceptance, drops + batch.node_resamples,
        _sampling_cost(psi, n_draws, chain_length, burn_in,
                       batch.node_resamples),
        branch_factor(psi) * n_draws)


def update_gas(h, base, group, n_samples, k, chain_length,
               burn_in=DEFAULT_BURN_IN, step_size=DEFAULT_STEP_SIZE, seed=0,
               step_index=0):
    """Subsampled group averaging: one size-k uniform subset per training
    step defines the averaged wavefunction; N samples of its density."""
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    subset = gas_subsample(group, k, step_index,
                           child_seed(seed, "gas-subsample"))
    psi = SymmetrizedWavefunction(base, "ga", subset=subset)
    batch = sample_batch(psi, n_samples, chain_length, burn_in, step_size,
                         child_seed(seed, "sampler"))
    delta, energy, stderr, variance, drops = _gradient_mean(
        h, psi, batch.positions, batch.spins)
    return UpdateEstimate(
        delta, "GAs", n_samples, int(k), int(chain_length), energy, stderr,
        variance, batch.acceptance, drops + batch.node_resamples,
        _sampling_cost(psi, n_samples, chain_length, burn_in,
                       batch.node_resamples),
        branch_factor(psi) * n_samples)


# --- training loop ----------------------------------------------------------

class TrainSettings(NamedTuple):
    """Everything a training run depends on besides the system itself."""

    method: str = "og"        # og | da | ga | gas
    steps: int = 100
    n_samples: int = 256
    k: int = 1
    chain_length: int = 10
    burn_in: int = DEFAULT_BURN_IN
    step_size: float = DEFAULT_STEP_SIZE
    learning_rate: float = 0.05
    lr_decay: float = 1.0     # multiplicative factor applied every interval
    lr_decay_every: int = 0   # 0 disables decay
    seed: int = 0
    checkpoint_every: int = 0  # 0 keeps only the initial and final snapshots


class TraceRow(NamedTuple):
    step: int
    energy: float
    stderr: float
    variance: float
    acceptance: float
    wall_time: float      # measured; kept out of the canonical CSV
    n_evals_sample: int
    n_evals_grad: int


class TrainResult(NamedTuple):
    ansatz: object
    trace: tuple
    diverged: bool
    initial_energy: float


TRACE_COLUMNS = ("step", "energy", "stderr", "var_elocal", "acceptance",
                 "c_samp", "c_grad")

DIVERGENCE_FACTOR = 1e3


def learning_rate_at(settings, step):
    if settings.lr_decay_every <= 0:
        return settings.learning_rate
    drops = step // settings.lr_decay_every
    return settings.learning_rate * settings.lr_decay**drops


def _trace_line(row):
    cells = (str(row.step), repr(float(row.energy)), repr(float(row.stderr)),
             repr(float(row.variance)), repr(float(row.acceptance)),
             str(row.n_evals_sample), str(row.n_evals_grad))
    return ",".join(cells) + "\n"


def _dispatch_update(h, base, group, settings, step_index):
    seed = child_seed(settings.seed, f"step-{step_index}")
    args = (h, base, group, settings.n_samples, settings.k,
            settings.chain_length)
    kwargs = dict(burn_in=settings.burn_in, step_size=settings.step_size,
                  seed=seed)
    method = settings.method.lower()
    if method == "og":
        return update_og(*args, **kwargs)
    if method in ("da", "ga", "gas") and group is None:
        raise ValueError(f"method {method!r} needs a symmetry group")
    if method == "da":
        return update_da(*args, **kwargs)
    if method == "ga":
        return update_ga(*args, **kwargs)
    if method == "gas":
        return update_gas(*args, step_index=step_index, **kwargs)
    raise ValueError(
        f"method {settings.method!r} is not trainable; training supports "
        "og, da, ga and gas (averaging-at-inference modes have no training "
        "path)"
    )


def train(h, base, settings, group=None, trace_path=None,
          checkpoint_dir=None):
    """Alternate fresh sampling with one first-order update per step.

    Each step derives its own seed from (settings.seed, step index), so the
    whole run is a deterministic function of (h, base, settings, group).
    The divergence guard aborts once the energy estimate exceeds the
    initial one by a factor of 10³ (on the scale max(|E₀|, 1)) or stops
    being finite; the partial trace is returned with diverged = True.
    """
    if settings.steps < 0:
        raise ValueError("steps must be nonnegative")
    ansatz = base
    trace = []
    diverged = False
    applied = 0
    initial_energy = float("nan")
    trace_file = open(trace_path, "w", encoding="ascii") \
        if trace_path is not None else None
    try:
        if trace_file is not None:
            trace_file.write(",".join(TRACE_COLUMNS) + "\n")
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, ansatz, 0, settings.seed)
        for t in range(settings.steps):
            started = time.perf_counter()
            est = _dispatch_update(h, ansatz, group, settings, t)
            row = TraceRow(t, est.energy, est.stderr, est.variance,
                           est.acceptance, time.perf_counter() - started,
                           est.n_evals_sample, est.n_evals_grad)
            trace.append(row)
            if trace_file is not None:
                trace_file.write(_trace_line(row))
            if t == 0:
                initial_energy = est.energy
            guard = DIVERGENCE_FACTOR * max(abs(initial_energy), 1.0)
            if not np.isfinite(est.energy) \
                    or est.energy - initial_energy > guard:
                diverged = True
                break
            theta = ansatz.params - learning_rate_at(settings, t) \
                * est.delta_theta
            ansatz = ansatz.with_params(theta)
            applied = t + 1
            if checkpoint_dir is not None and settings.checkpoint_every > 0 \
                    and applied % settings.checkpoint_every == 0 \
                    and applied < settings.steps:
                save_checkpoint(checkpoint_dir, ansatz, applied,
                                settings.seed)
        if checkpoint_dir is not None and applied > 0:
            save_checkpoint(checkpoint_dir, ansatz, applied, settings.seed)
    finally:
        if trace_file is not None:
            trace_file.close()
    return TrainResult(ansatz, tuple(trace), diverged, initial_energy)


# --- checkpoints ------------------------------------------------------------

def _basis_cutoff(basis):
    """Smallest cutoff that reproduces the basis: √(max |k|²) over members."""
    worst = max(sum(c * c for c in fn.wavevector) for fn in basis)
    root = math.isqrt(worst)
    return float(root) if root * root == worst else math.sqrt(worst)


def save_checkpoint(directory, ansatz, step, seed):
    """Write step_<n>.bin (flat little-endian float64 parameter vector)
    plus the JSON sidecar describing how to rebuild the ansatz around it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path = directory / f"step_{int(step)}.bin"
    bin_path.write_bytes(ansatz.params.astype("<f8").tobytes())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": int(step),
        "seed": int(seed),
        "n_params": int(ansatz.n_params),
        "dim": int(ansatz.dim),
        "cutoff": _basis_cutoff(ansatz.basis),
        "n_up": int(ansatz.n_up),
        "n_down": int(ansatz.n_down),
        "n_terms": int(ansatz.n_terms),
        "term_weights": [float(w) for w in ansatz.term_weights],
        "jastrow": bool(ansatz.jastrow),
    }
    sidecar = bin_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                       encoding="ascii")
    return bin_path


def load_checkpoint(path):
    """Rebuild (ansatz, metadata) from a .bin/.json checkpoint pair; either
    path may be given.  Raises ValueError when the pair is inconsistent."""
    path = Path(path)
    if path.suffix == ".json":
        meta_path, bin_path = path, path.with_suffix(".bin")
    else:
        meta_path, bin_path = path.with_suffix(".json"), path
    meta = json.loads(meta_path.read_text(encoding="ascii"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {meta.get('format')!r}")
    theta = np.frombuffer(bin_path.read_bytes(), dtype="<f8").copy()
    if len(theta) != meta["n_params"]:
        raise ValueError(
            f"checkpoint holds {len(theta)} parameters, sidecar promises "
            f"{meta['n_params']}"
        )
    basis = plane_wave_basis(meta["dim"], meta["cutoff"])
    nb = len(basis)
    nt = meta["n_terms"]
    shell = Ansatz(basis, meta["n_up"], meta["n_down"],
                   np.zeros((nt, nb, meta["n_up"])),
                   np.zeros((nt, nb, meta["n_down"])),
                   term_weights=meta["term_weights"],
                   jastrow=meta["jastrow"])
    if shell.n_params != meta["n_params"]:
        raise ValueError(
            "sidecar shape is internally inconsistent: rebuilt ansatz has "
            f"{shell.n_params} parameters, sidecar promises {meta['n_params']}"
        )
    return shell.with_params(theta), meta


# --- evaluation metrics -----------------------------------------------------

class EvalMetrics(NamedTuple):
    energy: float
    stderr: float         # batch means over 32 blocks
    variance: float       # Var[E_local]
    acceptance: float
    n_samples: int
    node_drops: int


def evaluate_metrics(h, psi, samples):
    """Energy mean ± stderr and Var[E_local] over a harvested batch.

    The standard error uses batch means over 32 contiguous blocks (fewer
    when the batch is smaller) of the chain-major sample order, which
    absorbs the chain autocorrelation that a naive σ/√n would ignore.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    res = eval_psi_batch(psi, samples.positions, samples.spins,
                         want_grad_x=False, want_laplacian=True,
                         want_grad_params=False)
    live = res["sign"] != 0
    n_live = int(np.count_nonzero(live))
    if n_live < 2:
        raise ValueError("need at least 2 non-node samples")
    el = local_energy_batch(h, res["laplacian_over_psi"],
                            samples.positions)[live]
    return EvalMetrics(
        float(el.mean()), _batch_means_stderr(el), float(el.var(ddof=1)),
        samples.acceptance, n_live, len(samples) - n_live)


def var_pa_over_og(base, subset, samples, return_details=False):
    """Sample variance of ψ^G/ψ under the base density: how far the base
    already is from G-symmetric (0 iff symmetric on the sample support).

    The signed ratio is formed in the log domain.  Samples where the base
    (the denominator) sits at a node are skipped and counted; numerator
    nodes legitimately contribute a ratio of 0.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    bres = eval_psi_batch(base, samples.positions, samples.spins,
                          want_grad_x=False, want_laplacian=False,
                          want_grad_params=False)
    psi = SymmetrizedWavefunction(base, "ga", subset=list(subset))
    gres = psi.evaluate_batch(samples.positions, samples.spins,
                              want_grad_x=False, want_laplacian=False,
                              want_grad_params=False)
    live = bres["sign"] != 0
    skipped = int(len(samples) - np.count_nonzero(live))
    if np.count_nonzero(live) < 2:
        raise ValueError("need at least 2 samples off the base's nodes")
    diff = gres["log_abs"][live] - bres["log_abs"][live]
    ratio = gres["sign"][live] * bres["sign"][live] * np.exp(diff)
    value = float(ratio.var(ddof=1))
    if return_details:
        return value, skipped
    return value
