"""Small differentiable classifiers with cross-entropy loss.

Two bias-free model kinds are supported:

* softmax regression: ``logits = W x`` with ``W`` of shape ``(K, d)``;
* one-hidden-layer MLP: ``logits = W2 tanh(W1 x)`` with ``W1`` of shape
  ``(h, d)`` and ``W2`` of shape ``(K, h)``.

Parameters live in one flat float64 vector.  Softmax regression stores
``W`` row-major, so class ``k`` owns the contiguous block
``w[k*d:(k+1)*d]``.  The MLP stores ``W1.ravel()`` followed by
``W2.ravel()``.

Labels are 0-based integers in ``[0, K)``.
"""

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-300
FD_STEP = 1e-5
ORACLE_MAX_PARAMS = 2000

_LOSS_CAP = -np.log(PROB_FLOOR)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int
    K: int
    h: int = 0

    def __post_init__(self):
        if self.kind not in ("softmax", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be >= 1")
        if self.kind == "mlp" and self.h < 1:
            raise ValueError("mlp needs h >= 1")
        if self.kind == "softmax" and self.h != 0:
            raise ValueError("softmax regression has no hidden layer")

    @classmethod
    def softmax(cls, d, K):
        return cls("softmax", d, K)

    @classmethod
    def mlp(cls, d, h, K):
        return cls("mlp", d, K, h)

    @property
    def n(self):
        if self.kind == "softmax":
            return self.d * self.K
        return self.d * self.h + self.h * self.K

    def check(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n,):
            raise ValueError(f"parameter vector has shape {w.shape}, expected ({self.n},)")
        return w


@dataclass(frozen=True)
class DatasetSample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("x must be a finite 1-d vector")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


def softmax(logits):
    """Softmax over the last axis, with max-subtraction."""
    o = np.asarray(logits, dtype=np.float64)
    e = np.exp(o - o.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _split_mlp(w, spec):
    k = spec.h * spec.d
    return w[:k].reshape(spec.h, spec.d), w[k:].reshape(spec.K, spec.h)


def logits(x, w, spec):
    """Logits for one input ``(d,)`` or a batch ``(B, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "softmax":
        return x @ w.reshape(spec.K, spec.d).T
    W1, W2 = _split_mlp(w, spec)
    return np.tanh(x @ W1.T) @ W2.T


def predict_proba(x, w, spec):
    return softmax(logits(x, spec.check(w), spec))


def _check_sample(sample, spec):
    if sample.x.shape != (spec.d,):
        raise ValueError(f"sample has {sample.x.shape[0]} features, model expects {spec.d}")
    if not 0 <= sample.y < spec.K:
        raise ValueError(f"label {sample.y} outside [0, {spec.K})")


def _nll(o, y, cap=True):
    o_max = o.max(axis=-1)
    lse = o_max + np.log(np.exp(o - o_max[..., None]).sum(axis=-1))
    picked = np.take_along_axis(o, np.asarray(y)[..., None], axis=-1)[..., 0]
    return np.minimum(lse - picked, _LOSS_CAP) if cap else lse - picked


def loss(sample, w, spec):
    """Cross-entropy ``-log sigma_y``.

    Computed through log-sum-exp and capped at ``-log(PROB_FLOOR)``, which
    is the same as flooring the predicted probability at ``PROB_FLOOR``.
    """
    w = spec.check(w)
    _check_sample(sample, spec)
    return float(_nll(logits(sample.x, w, spec), sample.y))


def jacobian(x, w, spec):
    """Derivative of the K logits w.r.t. the n parameters, shape ``(K, n)``."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "softmax":
        return np.kron(np.eye(spec.K), x[None, :])
    W1, W2 = _split_mlp(w, spec)
    z = np.tanh(W1 @ x)
    dz = 1.0 - z * z
    J1 = ((W2 * dz[None, :])[:, :, None] * x[None, None, :]).reshape(spec.K, -1)
    J2 = np.kron(np.eye(spec.K), z[None, :])
    return np.hstack([J1, J2])


def _curvature_term(x, w, spec, r):
    """``sum_k r_k * d^2 logit_k / dw^2`` (zero for softmax regression)."""
    n = spec.n
    out = np.zeros((n, n))
    if spec.kind == "softmax":
        return out
    h, d, K = spec.h, spec.d, spec.K
    W1, W2 = _split_mlp(w, spec)
    z = np.tanh(W1 @ x)
    dz = 1.0 - z * z
    # W1-W1 block: nonzero only within the same hidden unit
    c = -2.0 * z * dz * (W2.T @ r)
    xx = np.outer(x, x)
    for j in range(h):
        s = slice(j * d, (j + 1) * d)
        out[s, s] = c[j] * xx
    # W2[l, j] x W1[j, i] cross terms
    off = h * d
    for l in range(K):
        for j in range(h):
            col = off + l * h + j
            out[j * d:(j + 1) * d, col] = r[l] * dz[j] * x
            out[col, j * d:(j + 1) * d] = r[l] * dz[j] * x
    return out


def gradient(sample, w, spec):
    """Analytic gradient of :func:`loss` w.r.t. ``w``."""
    w = spec.check(w)
    _check_sample(sample, spec)
    p = softmax(logits(sample.x, w, spec))
    p[sample.y] -= 1.0
    if spec.kind == "softmax":
        return np.outer(p, sample.x).ravel()
    return jacobian(sample.x, w, spec).T @ p


def hessian(sample, w, spec):
    """Analytic Hessian of :func:`loss` (Gauss-Newton part plus curvature)."""
    w = spec.check(w)
    _check_sample(sample, spec)
    p = softmax(logits(sample.x, w, spec))
    J = jacobian(sample.x, w, spec)
    S = np.diag(p) - np.outer(p, p)
    H = J.T @ S @ J
    if spec.kind == "mlp":
        r = p.copy()
        r[sample.y] -= 1.0
        H = H + _curvature_term(sample.x, w, spec, r)
    return 0.5 * (H + H.T)


def softmax_regression_hessian(sample, w, spec):
    """Closed form ``(diag(sigma) - sigma sigma^T) kron x x^T``."""
    if spec.kind != "softmax":
        raise ValueError("closed-form Hessian only exists for softmax regression")
    w = spec.check(w)
    p = softmax(logits(sample.x, w, spec))
    return np.kron(np.diag(p) - np.outer(p, p), np.outer(sample.x, sample.x))


def exact_hessian(sample, w, spec, step=FD_STEP):
    """Hessian by central differences of the analytic gradient, symmetrized.

    Intended as an oracle; refuses models with more than
    ``ORACLE_MAX_PARAMS`` parameters.
    """
    if spec.n > ORACLE_MAX_PARAMS:
        raise ValueError("oracle scale exceeded")
    w = spec.check(w)
    H = np.empty((spec.n, spec.n))
    wp = w.copy()
    for i in range(spec.n):
        wp[i] = w[i] + step
        gp = gradient(sample, wp, spec)
        wp[i] = w[i] - step
        gm = gradient(sample, wp, spec)
        wp[i] = w[i]
        H[:, i] = (gp - gm) / (2.0 * step)
    return 0.5 * (H + H.T)


def outer_product_g(sample, w, spec):
    g = gradient(sample, w, spec)
    return np.outer(g, g)


def empirical_risk(batch, w, spec):
    """Mean loss over a non-empty sequence of samples."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    return float(np.mean([loss(s, w, spec) for s in batch]))


def inverse_cdf(probs, u):
    """Categorical draw(s) by inverse CDF: smallest k with cumsum_k > u."""
    cdf = np.cumsum(probs, axis=-1)
    k = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    return np.minimum(k, np.shape(probs)[-1] - 1)


def sample_label(x, w_star, spec, rng):
    """Draw a label from ``sigma(x; w_star)`` using one uniform from ``rng``."""
    p = predict_proba(x, w_star, spec)
    return int(inverse_cdf(p, rng.random()))


# Batched training helpers.  X has shape (B, d), y shape (B,).

def batch_loss(X, y, w, spec):
    return _nll(logits(X, w, spec), y)


def risk(X, y, w, spec):
    return float(np.mean(batch_loss(X, y, w, spec)))


def raw_risk(X, y, w, spec):
    """Mean cross-entropy without the probability floor (for divergence checks)."""
    return float(np.mean(_nll(logits(X, w, spec), y, cap=False)))


def risk_gradient(X, y, w, spec):
    """Mean gradient over a batch (same values as averaging :func:`gradient`)."""
    X = np.asarray(X, dtype=np.float64)
    B = X.shape[0]
    P = softmax(logits(X, w, spec))
    P[np.arange(B), y] -= 1.0
    if spec.kind == "softmax":
        return (P.T @ X).ravel() / B
    W1, W2 = _split_mlp(w, spec)
    Z = np.tanh(X @ W1.T)
    gW2 = P.T @ Z
    back = (P @ W2) * (1.0 - Z * Z)
    gW1 = back.T @ X
    return np.concatenate([gW1.ravel(), gW2.ravel()]) / B


def error_rate(X, y, w, spec):
    """Top-1 misclassification rate; ties go to the lowest class index."""
    return float(np.mean(np.argmax(logits(X, w, spec), axis=1) != y))


def risk_hessian(X, y, w, spec):
    """Hessian of :func:`risk`.  Softmax regression is vectorized."""
    X = np.asarray(X, dtype=np.float64)
    if spec.kind != "softmax":
        return np.mean([hessian(DatasetSample(x, c), w, spec) for x, c in zip(X, y)], axis=0)
    P = softmax(logits(X, w, spec))
    B = X.shape[0]
    # sum_i (diag p_i - p_i p_i^T) kron x_i x_i^T, assembled block by block
    H = np.empty((spec.K, spec.d, spec.K, spec.d))
    for k in range(spec.K):
        for l in range(k, spec.K):
            c = P[:, k] * ((k == l) - P[:, l])
            blk = (X * c[:, None]).T @ X / B
            H[k, :, l, :] = blk
            H[l, :, k, :] = blk.T
    return H.reshape(spec.n, spec.n)


def fit_newton(X, y, spec, iters=30, w0=None, tol=1e-12):
    """Minimize :func:`risk` for softmax regression with damped Newton steps.

    The Hessian is singular along the class-shift direction, so each step
    solves the Newton system in the least-squares sense.
    """
    if spec.kind != "softmax":
        raise ValueError("Newton fitting is only provided for softmax regression")
    w = np.zeros(spec.n) if w0 is None else spec.check(w0).copy()
    f = risk(X, y, w, spec)
    for _ in range(iters):
        g = risk_gradient(X, y, w, spec)
        if np.linalg.norm(g) < tol:
            break
        step = np.linalg.lstsq(risk_hessian(X, y, w, spec), g, rcond=1e-12)[0]
        a = 1.0
        while a > 1e-8:
            w_new = w - a * step
            f_new = risk(X, y, w_new, spec)
            if f_new <= f:
                break
            a *= 0.5
        else:
            break
        w, f = w_new, f_new
    return w
