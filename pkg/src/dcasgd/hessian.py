"""Outer-product Hessian approximators and their exact quality measures.

All expectations are over the label ``y ~ sigma(x; w_star)`` and are
computed by enumerating the K classes, so every number here is exact up
to floating point.  Norms of matrices are Frobenius norms.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import DatasetSample

MAX_ENUM_CLASSES = 64

SUPPLEMENTARY = "supplementary"
MAIN = "main"


@dataclass(frozen=True)
class Approximator:
    """One of ``G``, ``lam * G`` or ``Diag(lam * G)``."""

    kind: str
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("outer", "lambda", "diag"):
            raise ValueError(f"unknown approximator {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @classmethod
    def outer_product(cls):
        return cls("outer", 1.0)

    @classmethod
    def lambda_scaled(cls, lam):
        return cls("lambda", float(lam))

    @classmethod
    def diag_lambda_scaled(cls, lam):
        return cls("diag", float(lam))

    def build(self, g):
        if self.kind == "outer":
            return np.outer(g, g)
        if self.kind == "lambda":
            return self.lam * np.outer(g, g)
        return np.diag(self.lam * g * g)


@dataclass
class MseReport:
    mse_g: float
    mse_lambda_g: float
    mse_diag: float
    epsilon_t: float
    condition_held: bool


@dataclass
class LipschitzEstimates:
    """Empirical constants; estimates over a probe set, not proven bounds.

    ``lower``/``upper`` bound ``|d sigma_k / d w_i|`` over every class k
    and probe; ``alpha``/``beta`` bound ``sigma_k(x, w*) / sigma_k(x, w_t)``.
    """

    l1: float
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    beta: float

    @property
    def valid(self):
        return bool(
            np.isfinite(self.alpha) and np.isfinite(self.beta) and self.alpha > 0
            and np.all(self.lower > 0) and np.all(np.isfinite(self.upper))
        )


@dataclass(frozen=True)
class Probe:
    """An input with the current and the data-generating parameters."""

    x: np.ndarray
    w_t: np.ndarray
    w_star: np.ndarray


@dataclass
class ProbeRecord:
    probe_id: int
    lam: float
    mse_g: float
    mse_lambda_g: float
    mse_diag: float
    eps_t: float
    eps_d: float
    condition_held: bool
    corollary_held: bool
    constants_valid: bool
    extra: dict = field(default_factory=dict)


def expected_over_labels(x, w_star, f, spec):
    """Exact ``E_{y ~ sigma(x; w_star)} f(y)`` by enumerating labels."""
    if spec.K > MAX_ENUM_CLASSES:
        raise ValueError(f"label enumeration limited to K <= {MAX_ENUM_CLASSES}")
    p = model.predict_proba(x, w_star, spec)
    total = None
    for k in range(spec.K):
        term = p[k] * np.asarray(f(k), dtype=np.float64)
        total = term if total is None else total + term
    return total if np.ndim(total) else float(total)


def _per_label(x, w, spec):
    """Gradients and Hessians of the loss for every possible label."""
    grads, hessians = [], []
    for k in range(spec.K):
        s = DatasetSample(x, k)
        grads.append(model.gradient(s, w, spec))
        hessians.append(model.hessian(s, w, spec))
    return grads, hessians


def mse_of_approximator(kind, x, w_t, w_star, spec):
    """``E ||A(y) - H(y)||_F^2`` with A built from the label's gradient at w_t."""
    grads, hessians = _per_label(x, w_t, spec)
    return expected_over_labels(
        x, w_star, lambda k: np.sum((kind.build(grads[k]) - hessians[k]) ** 2), spec)


def epsilon_t(x, w_t, w_star, spec):
    """``||E G(w_t) - E H(w_t)||_F``; vanishes at ``w_t == w_star``."""
    grads, hessians = _per_label(x, w_t, spec)
    EG = expected_over_labels(x, w_star, lambda k: np.outer(grads[k], grads[k]), spec)
    EH = expected_over_labels(x, w_star, lambda k: hessians[k], spec)
    return float(np.linalg.norm(EG - EH))


def outer_product_variance(x, w_t, w_star, spec):
    """``E ||G - E G||_F^2``, the variance of the outer product."""
    grads, _ = _per_label(x, w_t, spec)
    Gs = [np.outer(g, g) for g in grads]
    EG = expected_over_labels(x, w_star, lambda k: Gs[k], spec)
    return expected_over_labels(x, w_star, lambda k: np.sum((Gs[k] - EG) ** 2), spec)


def diagonalization_error(x, w_t, w_star, spec):
    """``||Diag(E H) - E H||_F`` measured at the probe."""
    _, hessians = _per_label(x, w_t, spec)
    EH = expected_over_labels(x, w_star, lambda k: hessians[k], spec)
    return float(np.linalg.norm(EH - np.diag(np.diag(EH))))


def softmax_sensitivity(x, w, spec):
    """``d sigma_k / d w_i`` as a ``(K, n)`` matrix."""
    p = model.predict_proba(x, w, spec)
    return (np.diag(p) - np.outer(p, p)) @ model.jacobian(x, w, spec)


def estimate_lipschitz(probes, spec):
    probes = list(probes)
    if not probes:
        raise ValueError("empty probe set")
    lower = np.full(spec.n, np.inf)
    upper = np.zeros(spec.n)
    alpha, beta, l1 = np.inf, 0.0, 0.0
    for pr in probes:
        ds = np.abs(softmax_sensitivity(pr.x, pr.w_t, spec))
        lower = np.minimum(lower, ds.min(axis=0))
        upper = np.maximum(upper, ds.max(axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = model.predict_proba(pr.x, pr.w_star, spec) / model.predict_proba(pr.x, pr.w_t, spec)
        # 0/0 cannot be bounded away from zero: mark as degenerate
        ratio = np.where(np.isnan(ratio), 0.0, ratio)
        alpha = min(alpha, float(ratio.min()))
        beta = max(beta, float(ratio.max()))
        for k in range(spec.K):
            g = model.gradient(DatasetSample(pr.x, k), pr.w_t, spec)
            l1 = max(l1, float(np.linalg.norm(g)))
    return LipschitzEstimates(l1, lower, upper, alpha, beta)


def condition_constants(lam, lips, mode=SUPPLEMENTARY):
    """Per-(i, j) constants ``(C_ij, C'_ij)`` of the sufficient condition.

    In ``MAIN`` mode ``C`` is the scalar max over (i, j) and ``C'`` is None.
    """
    if mode not in (MAIN, SUPPLEMENTARY):
        raise ValueError(f"unknown mode {mode!r}")
    l, u = lips.lower, lips.upper
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ratio = np.outer(u, u) / np.outer(l, l)
        if mode == MAIN:
            return float(np.max(ratio * lips.beta / lips.alpha) ** 2 / (1.0 + lam)), None
        C = (ratio * lips.beta) ** 2 / (lips.alpha * (1.0 + lam))
        Cp = 1.0 / ((1.0 + lam) * lips.alpha * np.outer(l, l) ** 2)
    return C, Cp


def sufficient_condition(sigma_t, lam, lips, eps_t, mode=SUPPLEMENTARY):
    """Sufficient condition for ``mse(lam G) <= mse(G)``.

    ``SUPPLEMENTARY`` checks, for every (i, j),
    ``sum 1/s^3 >= 2 [C_ij (sum 1/s)^2 + C'_ij L1^2 |eps|]``.
    ``MAIN`` checks the single-constant form
    ``sum 1/s^3 >= 2 C [(sum 1/s)^2 + 2 L1^2 eps]``.
    Returns False when the constants are degenerate (see
    :attr:`LipschitzEstimates.valid`).
    """
    s = np.asarray(sigma_t, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("sigma entries must be positive")
    if not lips.valid:
        return False
    C, Cp = condition_constants(lam, lips, mode)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lhs = np.sum(1.0 / s ** 3)
        inv = np.sum(1.0 / s) ** 2
        if mode == MAIN:
            rhs = 2.0 * C * (inv + 2.0 * lips.l1 ** 2 * eps_t)
        else:
            rhs = np.max(2.0 * (C * inv + Cp * lips.l1 ** 2 * abs(eps_t)))
    return bool(lhs >= rhs)


def corollary_region(K, C, l1, eps_t, c_prime=None):
    """Interval of ``sigma_k0`` values that guarantee the condition.

    Without ``c_prime``: ``[1 - (K-1) / (2C(K^2 + L1^2 eps)), 1]``.
    With ``c_prime``: ``[1 - (K-1) / (2(C K^2 + C' L1^2 eps)), 1]``.
    ``C``/``c_prime`` may be arrays of per-(i, j) constants, in which case
    the intersection over (i, j) is returned.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if np.any(np.asarray(C) <= 0):
        raise ValueError("C must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        if c_prime is None:
            denom = 2.0 * np.asarray(C) * (K ** 2 + l1 ** 2 * eps_t)
        else:
            denom = 2.0 * (np.asarray(C) * K ** 2 + np.asarray(c_prime) * l1 ** 2 * eps_t)
        lower = np.max(1.0 - (K - 1) / denom)
    return float(lower), 1.0


def in_corollary_region(sigma_t, lam, lips, eps_t, mode=SUPPLEMENTARY):
    if not lips.valid:
        return False
    C, Cp = condition_constants(lam, lips, mode)
    lo, hi = corollary_region(len(sigma_t), C, lips.l1, eps_t, Cp)
    return bool(np.any((np.asarray(sigma_t) >= lo) & (np.asarray(sigma_t) <= hi)))


def diag_mse_bound(lam, v1, l1, eps_t, eps_d):
    """``4 lam^2 V1 + 4 (1-lam)^2 L1^4 + 4 eps_t^2 + 4 eps_D``."""
    if min(lam, v1, l1, eps_t, eps_d) < 0:
        raise ValueError("all inputs must be non-negative")
    return 4 * lam ** 2 * v1 + 4 * (1 - lam) ** 2 * l1 ** 4 + 4 * eps_t ** 2 + 4 * eps_d


def mse_report(x, w_t, w_star, spec, lam, mode=SUPPLEMENTARY):
    eps = epsilon_t(x, w_t, w_star, spec)
    lips = estimate_lipschitz([Probe(x, w_t, w_star)], spec)
    sigma = model.predict_proba(x, w_t, spec)
    return MseReport(
        mse_g=mse_of_approximator(Approximator.outer_product(), x, w_t, w_star, spec),
        mse_lambda_g=mse_of_approximator(Approximator.lambda_scaled(lam), x, w_t, w_star, spec),
        mse_diag=mse_of_approximator(Approximator.diag_lambda_scaled(lam), x, w_t, w_star, spec),
        epsilon_t=eps,
        condition_held=sufficient_condition(sigma, lam, lips, eps, mode),
    )


def make_probes(spec, count, seed, feature_scale=1.0, wstar_scale=1.0, offset_range=(1e-4, 1.0)):
    """Random probes: Gaussian x and w*, and w_t = w* + Gaussian offset.

    Feature and w* scales are drawn log-uniformly within a factor of 4 of
    the given ones and the offset scale log-uniformly over ``offset_range``,
    so a sweep covers confident and flat predictions, near and far from w*.
    """
    from .seeding import PROBES, substream

    rng = substream(seed, PROBES)
    probes = []
    for _ in range(count):
        fs = feature_scale * 4.0 ** rng.uniform(-1, 1)
        ws = wstar_scale * 4.0 ** rng.uniform(-1, 1)
        os_ = np.exp(rng.uniform(np.log(offset_range[0]), np.log(offset_range[1])))
        x = rng.normal(size=spec.d) * fs / np.sqrt(spec.d)
        w_star = rng.normal(size=spec.n) * ws
        w_t = w_star + rng.normal(size=spec.n) * os_
        probes.append(Probe(x, w_t, w_star))
    return probes


def probe_record(probe_id, probe, lam, spec, mode=SUPPLEMENTARY):
    x, w_t, w_star = probe.x, probe.w_t, probe.w_star
    grads, hessians = _per_label(x, w_t, spec)

    def mse(kind):
        return expected_over_labels(
            x, w_star, lambda k: np.sum((kind.build(grads[k]) - hessians[k]) ** 2), spec)

    eps = epsilon_t(x, w_t, w_star, spec)
    lips = estimate_lipschitz([probe], spec)
    sigma = model.predict_proba(x, w_t, spec)
    return ProbeRecord(
        probe_id=probe_id,
        lam=float(lam),
        mse_g=mse(Approximator.outer_product()),
        mse_lambda_g=mse(Approximator.lambda_scaled(lam)),
        mse_diag=mse(Approximator.diag_lambda_scaled(lam)),
        eps_t=eps,
        eps_d=diagonalization_error(x, w_t, w_star, spec),
        condition_held=sufficient_condition(sigma, lam, lips, eps, mode) if np.all(sigma > 0) else False,
        corollary_held=in_corollary_region(sigma, lam, lips, eps, mode),
        constants_valid=lips.valid,
        extra={"l1": lips.l1, "v1": outer_product_variance(x, w_t, w_star, spec)},
    )


SWEEP_COLUMNS = ("probe_id", "lambda", "mse_g", "mse_lambda_g", "mse_diag",
                 "eps_t", "eps_d", "condition_held", "corollary_held", "constants_valid")


def sweep(probes, lams, spec, mode=SUPPLEMENTARY):
    """One :class:`ProbeRecord` per (probe, lambda) pair.

    ``lams`` is either a scalar applied to every probe or one value per probe.
    """
    lams = np.broadcast_to(np.asarray(lams, dtype=np.float64), (len(probes),))
    return [probe_record(i, p, lam, spec, mode) for i, (p, lam) in enumerate(zip(probes, lams))]


def write_sweep_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            w.writerow([r.probe_id, repr(r.lam), repr(r.mse_g), repr(r.mse_lambda_g), repr(r.mse_diag),
                        repr(r.eps_t), repr(r.eps_d), int(r.condition_held), int(r.corollary_held),
                        int(r.constants_valid)])
