"""Replicate statistics for update estimators.

Four harnesses share this module: variance norms of repeated updates at a
frozen ansatz, the augmented-estimator variance identities under exactly
invariant sampling, normality tests of mean-type updates, and the smoother
derivative probe.  Monte Carlo assertions are reported with 3-sigma bands
estimated from the replicate ensemble itself; identical seeds give
bitwise-identical reports.
"""

import json
from typing import NamedTuple

import numpy as np
from scipy.stats import ks_2samp, kstest

from .ansatz import Ansatz, plane_wave_basis
from .smoothing import SmoothingSpec, lambda_eps_derivs
from .symmetrize import SymmetrizedWavefunction
from .vmc import (canonical_spins, child_seed, eval_psi_batch,
                  local_energy_batch, update_da, update_ga, update_gas,
                  update_og)

BOOTSTRAP_DEFAULT = 200
TOLERANCE_FLOOR = 1e-15

_UPDATE_FNS = {"og": update_og, "da": update_da, "ga": update_ga,
               "gas": update_gas}


def _as_python(obj):
    if isinstance(obj, dict):
        return {k: _as_python(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_python(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_as_python(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def report_json(report):
    """Canonical JSON text for a report: sorted keys, trailing newline."""
    return json.dumps(_as_python(report), sort_keys=True, indent=2) + "\n"


def _bootstrap_indices(rng, count, rounds):
    return rng.integers(count, size=(rounds, count))


def _covariance(rows):
    return np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))


def _largest_eigenvalue(matrix):
    return float(np.linalg.eigvalsh(matrix)[-1])


class UpdateFixture(NamedTuple):
    """Frozen-ansatz setting for repeated update draws."""

    h: object
    ansatz: object
    group: object
    n_samples: int
    k: int
    chain_length: int
    burn_in: int = 50
    step_size: float = 0.25


class UpdateStats(NamedTuple):
    """Replicate ensemble of parameter updates at a frozen ansatz.

    normalized_norm is the covariance's largest eigenvalue over sqrt(q);
    normalized_diag_max is the same scaling of the largest variance entry,
    kept alongside for comparability.  norm_sigma is a bootstrap standard
    deviation of normalized_norm.
    """

    method: str
    replicates: int
    mean: np.ndarray
    cov_diag: np.ndarray
    covariance: np.ndarray
    normalized_norm: float
    normalized_diag_max: float
    norm_sigma: float


def update_distribution(method, fixture, replicates, seed,
                        bootstrap=BOOTSTRAP_DEFAULT):
    """Draw independent updates at the fixture's frozen ansatz.

    Statistically meaningful tolerances want replicates >= 50; anything
    >= 2 is accepted so cheap smoke reports stay possible.
    """
    replicates = int(replicates)
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    fn = _UPDATE_FNS.get(method)
    if fn is None:
        raise ValueError(f"unknown update method {method!r}")
    group = fixture.group
    if method == "ga" and group is not None:
        group = list(group)

    deltas = []
    tag = method.upper()
    for r in range(replicates):
        kwargs = {"seed": child_seed(seed, f"rep-{r}")}
        if method == "gas":
            kwargs["step_index"] = r
        est = fn(fixture.h, fixture.ansatz, group, fixture.n_samples,
                 fixture.k, fixture.chain_length, burn_in=fixture.burn_in,
                 step_size=fixture.step_size, **kwargs)
        tag = est.method
        deltas.append(est.delta_theta)
    deltas = np.asarray(deltas)
    q = deltas.shape[1]
    scale = 1.0 / np.sqrt(q)

    cov = _covariance(deltas)
    rng = np.random.default_rng(child_seed(seed, "norm-boot"))
    norms = [scale * _largest_eigenvalue(_covariance(deltas[idx]))
             for idx in _bootstrap_indices(rng, replicates, bootstrap)]
    return UpdateStats(
        method=tag,
        replicates=replicates,
        mean=deltas.mean(axis=0),
        cov_diag=np.diag(cov).copy(),
        covariance=cov,
        normalized_norm=scale * _largest_eigenvalue(cov),
        normalized_diag_max=scale * float(np.max(np.diag(cov))),
        norm_sigma=float(np.std(norms, ddof=1)),
    )


class InvariantFixture:
    """Exact-sampling harness for the variance identities.

    Configurations are drawn uniformly on the cell, which every lattice
    isometry preserves exactly, so the augmentation identities hold for the
    sampling distribution itself with no Markov-chain bias.  The kernel is
    the per-sample gradient estimator with a fixed baseline, making samples
    i.i.d. rows.
    """

    invariant = True

    def __init__(self, h, ansatz, group, n_samples, k, baseline=0.0):
        group = list(group)
        if not group:
            raise ValueError("group must be nonempty")
        n_samples = int(n_samples)
        k = int(k)
        if k < 1:
            raise ValueError("k must be >= 1")
        if n_samples % k:
            raise ValueError("n_samples must be divisible by k")
        self.h = h
        self.ansatz = ansatz
        self.group = group
        self.n_samples = n_samples
        self.k = k
        self.baseline = float(baseline)
        self.spins = canonical_spins(ansatz)
        self._averaged = None

    def draw(self, rng, count):
        n = len(self.spins)
        return rng.random((count, n, self.ansatz.dim))

    def apply_element(self, g, positions):
        moved = positions @ g.rotation.T + g.translation
        moved %= 1.0
        moved[moved >= 1.0] = 0.0
        return moved

    def kernel(self, positions, psi=None):
        psi = self.ansatz if psi is None else psi
        res = eval_psi_batch(psi, positions, self.spins, want_grad_x=False,
                             want_laplacian=True, want_grad_params=True)
        if np.any(res["sign"] == 0):
            raise ValueError("kernel hit a node; the base must be nodeless")
        el = local_energy_batch(self.h, res["laplacian_over_psi"], positions)
        return 2.0 * (el - self.baseline)[:, None] * res["grad_params"]

    def averaged(self):
        if self._averaged is None:
            self._averaged = SymmetrizedWavefunction(self.ansatz, "ga",
                                                     subset=list(self.group))
        return self._averaged


def default_invariant_fixture(h, group, n_samples=64, k=2, baseline=0.0):
    """One spin-up electron, nodeless asymmetric three-mode orbital."""
    coeff = np.array([[[1.0], [0.35], [-0.2]]])
    ansatz = Ansatz(plane_wave_basis(1, 1), 1, 0, coeff,
                    np.zeros((1, 3, 0)))
    return InvariantFixture(h, ansatz, group, n_samples, k, baseline)


def _check(value, sigma):
    return bool(np.all(np.abs(value) <= 3.0 * np.asarray(sigma)
                       + TOLERANCE_FLOOR))


def prop41_check(fixture, replicates, seed, inner_samples=None,
                 bootstrap=BOOTSTRAP_DEFAULT):
    """Augmentation variance identity under exactly invariant sampling.

    Checks (a) the augmented and plain estimators agree in mean, (b) the
    entrywise variance excess equals (k-1)/N times the variance of the
    group-conditional mean of the kernel, estimated by full-group inner
    averaging, and (c) the covariance excess is nonnegative in the
    eigenvalue sense, all at 3 sigma.  With k = 1 the augmented estimator
    reuses the plain draws, so every comparison is exactly zero.
    """
    if not getattr(fixture, "invariant", False):
        raise ValueError("fixture sampling distribution is not invariant")
    replicates = int(replicates)
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    n = fixture.n_samples
    k = fixture.k
    group = fixture.group
    n_base = n // k

    rng_draw = np.random.default_rng(child_seed(seed, "draws"))
    rng_aug = np.random.default_rng(child_seed(seed, "augment"))
    plain = []
    augmented = []
    for _ in range(replicates):
        x = fixture.draw(rng_draw, n)
        rows = fixture.kernel(x)
        plain.append(rows.mean(axis=0))
        if k == 1:
            augmented.append(plain[-1])
            continue
        base = x[:n_base]
        choice = rng_aug.integers(len(group), size=(n_base, k))
        moved = np.empty((n_base, k) + base.shape[1:])
        for j, g in enumerate(group):
            sel = choice == j
            for col in range(k):
                rows_sel = sel[:, col]
                if np.any(rows_sel):
                    moved[rows_sel, col] = fixture.apply_element(
                        g, base[rows_sel])
        aug_rows = fixture.kernel(moved.reshape((n,) + base.shape[1:]))
        augmented.append(aug_rows.mean(axis=0))
    plain = np.asarray(plain)
    augmented = np.asarray(augmented)

    diff = augmented - plain
    mean_diff = diff.mean(axis=0)
    mean_sigma = diff.std(axis=0, ddof=1) / np.sqrt(replicates)

    excess = augmented.var(axis=0, ddof=1) - plain.var(axis=0, ddof=1)

    m = int(inner_samples) if inner_samples else max(4 * n, 512)
    rng_inner = np.random.default_rng(child_seed(seed, "inner"))
    y = fixture.draw(rng_inner, m)
    conditional = np.mean([fixture.kernel(fixture.apply_element(g, y))
                           for g in group], axis=0)
    predicted = (k - 1) / n * conditional.var(axis=0, ddof=1)

    rng_boot = np.random.default_rng(child_seed(seed, "boot"))
    rep_idx = _bootstrap_indices(rng_boot, replicates, bootstrap)
    excess_boot = np.array([augmented[idx].var(axis=0, ddof=1)
                            - plain[idx].var(axis=0, ddof=1)
                            for idx in rep_idx])
    inner_idx = _bootstrap_indices(rng_boot, m, bootstrap)
    predicted_boot = (k - 1) / n * np.array(
        [conditional[idx].var(axis=0, ddof=1) for idx in inner_idx])
    excess_sigma = np.sqrt(excess_boot.std(axis=0, ddof=1)**2
                           + predicted_boot.std(axis=0, ddof=1)**2)

    cov_excess = _covariance(augmented) - _covariance(plain)
    min_eig = float(np.linalg.eigvalsh(cov_excess)[0])
    eig_boot = [float(np.linalg.eigvalsh(_covariance(augmented[idx])
                                         - _covariance(plain[idx]))[0])
                for idx in rep_idx]
    eig_sigma = float(np.std(eig_boot, ddof=1))

    mean_ok = _check(mean_diff, mean_sigma)
    excess_ok = _check(excess - predicted, excess_sigma)
    eig_ok = bool(min_eig >= -3.0 * eig_sigma - TOLERANCE_FLOOR)
    return {
        "check": "augmentation-variance-identity",
        "replicates": replicates,
        "n_samples": n,
        "k": k,
        "group_order": len(group),
        "mean_difference": mean_diff,
        "mean_sigma": mean_sigma,
        "mean_ok": mean_ok,
        "excess_measured": excess,
        "excess_predicted": predicted,
        "excess_sigma": excess_sigma,
        "excess_ok": excess_ok,
        "min_eigenvalue": min_eig,
        "min_eigenvalue_sigma": eig_sigma,
        "eigenvalue_ok": eig_ok,
        "passed": bool(mean_ok and excess_ok and eig_ok),
    }


def lemma42_check(fixture, replicates, seed, bootstrap=BOOTSTRAP_DEFAULT):
    """Scaled replicate variance of the averaged-ansatz update vs the
    single-draw kernel variance.

    Each replicate averages N/k i.i.d. kernel rows at the group-averaged
    wavefunction; (N/k) times the replicate variance must match the pooled
    single-row variance within 3 sigma.  With N/k = 1 the two sides are the
    same numbers, so the match is exact.
    """
    if not getattr(fixture, "invariant", False):
        raise ValueError("fixture sampling distribution is not invariant")
    replicates = int(replicates)
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    n_draws = fixture.n_samples // fixture.k
    psi = fixture.averaged()

    rng_draw = np.random.default_rng(child_seed(seed, "draws"))
    all_rows = []
    for _ in range(replicates):
        x = fixture.draw(rng_draw, n_draws)
        all_rows.append(fixture.kernel(x, psi=psi))
    all_rows = np.asarray(all_rows)
    means = all_rows.mean(axis=1)

    scaled = n_draws * means.var(axis=0, ddof=1)
    pooled = all_rows.reshape(replicates * n_draws, -1).var(axis=0, ddof=1)

    rng_boot = np.random.default_rng(child_seed(seed, "boot"))
    diffs = []
    for idx in _bootstrap_indices(rng_boot, replicates, bootstrap):
        scaled_b = n_draws * means[idx].var(axis=0, ddof=1)
        pooled_b = all_rows[idx].reshape(len(idx) * n_draws, -1).var(
            axis=0, ddof=1)
        diffs.append(scaled_b - pooled_b)
    sigma = np.std(diffs, axis=0, ddof=1)

    ok = _check(scaled - pooled, sigma)
    return {
        "check": "averaged-update-variance-scaling",
        "replicates": replicates,
        "n_samples": fixture.n_samples,
        "k": fixture.k,
        "draws_per_replicate": n_draws,
        "scaled_replicate_variance": scaled,
        "single_draw_variance": pooled,
        "difference_sigma": sigma,
        "passed": ok,
    }


class SyntheticKernel:
    """Scalar-sample synthetic estimator with the reflection x -> 1 - x.

    kind "normal" injects standard normal rows directly (normality holds at
    every sample size); kind "bernoulli" uses shifted indicator coordinates
    F_l(x) = 1{frac(x + l/(2q+1)) < p}, strongly skewed for small p.
    """

    KINDS = ("normal", "bernoulli")

    def __init__(self, kind, q=3, p=0.1, k=2):
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")
        self.kind = kind
        self.q = int(q)
        self.p = float(p)
        self.k = int(k)
        self.offsets = np.arange(self.q) / (2.0 * self.q + 1.0)

    def rows(self, x):
        frac = (x[:, None] + self.offsets[None, :]) % 1.0
        return (frac < self.p).astype(float)

    def _reflect(self, x):
        return (1.0 - x) % 1.0

    def estimate(self, rng, n, method):
        if self.kind == "normal":
            return rng.standard_normal((n, self.q)).mean(axis=0)
        if method == "og":
            return self.rows(rng.random(n)).mean(axis=0)
        if n % self.k:
            raise ValueError("n must be divisible by k")
        base = rng.random(n // self.k)
        if method == "ga":
            avg = (self.rows(base) + self.rows(self._reflect(base))) / 2.0
            return avg.mean(axis=0)
        if method == "da":
            flips = rng.integers(2, size=(n // self.k, self.k))
            x = np.where(flips.astype(bool), self._reflect(base)[:, None],
                         base[:, None])
            return self.rows(x.ravel()).mean(axis=0)
        raise ValueError(f"unknown method {method!r}")


class CltReport(NamedTuple):
    """Normality of update coordinates across a grid of sample sizes.

    ks_coordinate[i][l] is the Kolmogorov-Smirnov distance of coordinate l
    (standardized by its measured mean and deviation) to the normal at
    n_grid[i]; ks_worst takes the maximum over coordinates, which for q = 1
    is the coordinate statistic itself.  ks_max_deviation compares the
    per-replicate largest absolute deviation against a seeded Monte Carlo
    max-of-Gaussians reference.  skewness holds standardized third moments.
    """

    method: str
    kind: str
    n_grid: tuple
    replicates: int
    ks_coordinate: tuple
    ks_sigma: tuple
    ks_worst: tuple
    ks_worst_sigma: tuple
    ks_max_deviation: tuple
    skewness: tuple
    dkw_band_95: float


def _ks_to_fitted_normal(column):
    std = column.std(ddof=1)
    if std == 0.0:
        return 1.0
    z = (column - column.mean()) / std
    return float(kstest(z, "norm").statistic)


def clt_check(method, fixture, n_grid, seed, replicates=2000,
              bootstrap=BOOTSTRAP_DEFAULT, reference_draws=8192):
    """Kolmogorov-Smirnov distances of update coordinates along n_grid."""
    replicates = int(replicates)
    if replicates < 8:
        raise ValueError("replicates must be >= 8")
    ks_all = []
    ks_sigma_all = []
    ks_worst = []
    ks_worst_sigma = []
    ks_maxdev = []
    skew_all = []
    for n in n_grid:
        rng = np.random.default_rng(child_seed(seed, f"clt-{method}-{n}"))
        deltas = np.asarray([fixture.estimate(rng, n, method)
                             for _ in range(replicates)])
        ks_n = [_ks_to_fitted_normal(deltas[:, l])
                for l in range(deltas.shape[1])]
        ks_all.append(tuple(ks_n))
        ks_worst.append(max(ks_n))

        mean = deltas.mean(axis=0)
        std = deltas.std(axis=0, ddof=1)
        centered = deltas - mean
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(std > 0, centered / std, 0.0)
        skew_all.append(tuple(float(v) for v in np.mean(z**3, axis=0)))

        rng_boot = np.random.default_rng(
            child_seed(seed, f"clt-boot-{method}-{n}"))
        boot = []
        for idx in _bootstrap_indices(rng_boot, replicates, bootstrap):
            boot.append([_ks_to_fitted_normal(deltas[idx, l])
                         for l in range(deltas.shape[1])])
        boot = np.asarray(boot)
        ks_sigma_all.append(tuple(boot.std(axis=0, ddof=1)))
        ks_worst_sigma.append(float(boot.max(axis=1).std(ddof=1)))

        rng_ref = np.random.default_rng(
            child_seed(seed, f"clt-ref-{method}-{n}"))
        reference = np.max(np.abs(rng_ref.standard_normal(
            (reference_draws, deltas.shape[1])) * std), axis=1)
        observed = np.max(np.abs(centered), axis=1)
        ks_maxdev.append(float(ks_2samp(observed, reference).statistic))
    return CltReport(
        method=method,
        kind=fixture.kind,
        n_grid=tuple(int(n) for n in n_grid),
        replicates=replicates,
        ks_coordinate=tuple(ks_all),
        ks_sigma=tuple(ks_sigma_all),
        ks_worst=tuple(ks_worst),
        ks_worst_sigma=tuple(ks_worst_sigma),
        ks_max_deviation=tuple(ks_maxdev),
        skewness=tuple(skew_all),
        dkw_band_95=float(np.sqrt(np.log(2.0 / 0.05) / (2.0 * replicates))),
    )


class BlowupRow(NamedTuple):
    epsilon: float
    kind: str
    max_first_derivative: float
    max_second_derivative: float
    first_bound: float
    second_bound: float
    max_elocal_deviation: float


BLOWUP_COLUMNS = ("epsilon", "kind", "max_d1", "max_d2", "bound_d1",
                  "bound_d2", "max_elocal_deviation")


def _blowup_base():
    # nodeless and deliberately asymmetric, so canonicalization weights vary
    coeff_up = np.array([[[1.0], [0.25], [0.15]]])
    coeff_down = np.array([[[1.0], [-0.2], [0.3]]])
    return Ansatz(plane_wave_basis(1, 1), 1, 1, coeff_up, coeff_down)


def blowup_probe(epsilons, kind, grid_points=10000, scan_points=1001):
    """Smoother derivative maxima and the boundary local-energy deviation.

    For each shell width: the largest first and second derivative of the
    smoother over a dense grid of its active interval, against the 1/eps
    and 1/eps^2 floors, plus the largest deviation of canonicalized vs base
    local energy along a scan that carries one electron across the region
    boundary of the one-dimensional fixture.
    """
    from . import systems

    epsilons = [float(e) for e in epsilons]
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    h, group, region = systems.chain_system()
    base = _blowup_base()
    spins = canonical_spins(base)
    t = np.linspace(0.63, 0.87, scan_points)
    positions = np.empty((scan_points, 2, 1))
    positions[:, 0, 0] = 0.45
    positions[:, 1, 0] = t

    base_res = eval_psi_batch(base, positions, spins, want_grad_x=False,
                              want_laplacian=True, want_grad_params=False)
    base_el = local_energy_batch(h, base_res["laplacian_over_psi"],
                                 positions)

    rows = []
    for eps in epsilons:
        spec = SmoothingSpec.create(kind, eps)
        w = np.linspace(0.0, eps, grid_points)
        _, d1, d2 = lambda_eps_derivs(spec, w)
        sc = SymmetrizedWavefunction(base, "sc", group=group, region=region,
                                     spec=spec)
        res = eval_psi_batch(sc, positions, spins, want_grad_x=False,
                             want_laplacian=True, want_grad_params=False)
        el = local_energy_batch(h, res["laplacian_over_psi"], positions)
        live = (res["sign"] != 0) & np.isfinite(el) & np.isfinite(base_el)
        deviation = float(np.max(np.abs(el[live] - base_el[live])))
        rows.append(BlowupRow(
            epsilon=eps,
            kind=kind,
            max_first_derivative=float(np.max(np.abs(d1))),
            max_second_derivative=float(np.max(np.abs(d2))),
            first_bound=1.0 / eps,
            second_bound=1.0 / eps**2,
            max_elocal_deviation=deviation,
        ))
    return tuple(rows)


def blowup_csv(rows):
    lines = [",".join(BLOWUP_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            repr(row.epsilon), row.kind,
            repr(row.max_first_derivative), repr(row.max_second_derivative),
            repr(row.first_bound), repr(row.second_bound),
            repr(row.max_elocal_deviation),
        ]))
    return "\n".join(lines) + "\n"
