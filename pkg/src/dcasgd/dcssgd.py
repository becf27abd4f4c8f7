"""Delay-compensated large-minibatch synchronous SGD.

A synchronous round collects M gradients ``g_j``, all evaluated at ``w_t``.
Instead of one averaged step, the round is unfolded into M sub-steps::

    g~ = g_j + lam * g_j * g_j * (w~ - w_t)
    w~ = w~ - (eta_hat / M) * g~

so every gradient after the first is corrected toward the point where a
sequential learner would have evaluated it.  The exact-Hessian tier uses
``g_j + H_j (w~ - w_t)`` instead of the elementwise term.
"""

import enum

import numpy as np

from . import model
from .optim import compensated_gradient, compensated_gradient_exact_hessian

CSV_COLUMNS = ("trial", "dist_dc", "dist_plain", "M", "eta", "lambda", "ordering")


class Ordering(enum.Enum):
    AS_GIVEN = "as-given"
    BY_COMPENSATED_NORM = "by-compensated-norm"


class UnfoldState:
    """Intermediate point of an unfolded round."""

    def __init__(self, w_t):
        self.w_t = np.array(w_t, dtype=np.float64)
        self.w_tilde = self.w_t.copy()
        self.applied = []

    @property
    def j(self):
        return len(self.applied)


def _prepare(w_t, grads, hessians):
    if len(grads) == 0:
        raise ValueError("empty grads")
    w_t = np.asarray(w_t, dtype=np.float64)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    for g in grads:
        if g.shape != w_t.shape:
            raise ValueError(f"dimension mismatch: gradient {g.shape} vs parameters {w_t.shape}")
    if hessians is not None and len(hessians) != len(grads):
        raise ValueError("need one Hessian per gradient")
    return w_t, grads


def dc_ssgd_step(w_t, grads, eta_hat, lam, ordering=Ordering.AS_GIVEN, hessians=None):
    """One delay-compensated synchronous round; returns the new parameters.

    With ``hessians`` given, ``lam`` is ignored and the exact-Hessian tier
    is used.  A scalar ``lam == 0`` without Hessians takes the closed form
    ``w_t - (eta_hat / M) * sum(grads)``, so it is independent of ordering.
    """
    w_t, grads = _prepare(w_t, grads, hessians)
    M = len(grads)
    step = eta_hat / M
    if hessians is None and np.isscalar(lam) and lam == 0:
        return w_t - step * np.sum(grads, axis=0)
    ordering = Ordering(ordering)
    st = UnfoldState(w_t)

    def comp(j):
        dw = st.w_tilde - w_t
        if hessians is not None:
            return compensated_gradient_exact_hessian(grads[j], hessians[j], dw)
        return compensated_gradient(grads[j], st.w_tilde, w_t, lam)

    remaining = list(range(M))
    while remaining:
        if ordering is Ordering.AS_GIVEN:
            j = remaining[0]
            g = comp(j)
        else:
            # greedy: the unapplied gradient whose compensated update is smallest
            cands = [(float(np.linalg.norm(comp(k))), k) for k in remaining]
            _, j = min(cands)
            g = comp(j)
        st.w_tilde = st.w_tilde - step * g
        st.applied.append(j)
        remaining.remove(j)
    return st.w_tilde


def plain_step(w_t, grads, eta_hat):
    """The uncompensated large-minibatch step."""
    w_t, grads = _prepare(w_t, grads, None)
    return w_t - (eta_hat / len(grads)) * np.sum(grads, axis=0)


def unfold_vs_sequential(w_t, grad_fns, eta, lam, ordering=Ordering.AS_GIVEN, hess_fns=None):
    """Distances of the compensated and plain rounds to M sequential steps.

    ``grad_fns[j](w)`` is the gradient of the j-th minibatch loss.  The
    sequential learner steps with ``eta`` and re-evaluates each gradient at
    its current point; both synchronous variants use ``eta_hat = M * eta``.
    """
    M = len(grad_fns)
    if M == 0:
        raise ValueError("empty grads")
    w_t = np.asarray(w_t, dtype=np.float64)
    w = w_t.copy()
    for f in grad_fns:
        w = w - eta * f(w)
    grads = [f(w_t) for f in grad_fns]
    hessians = None if hess_fns is None else [h(w_t) for h in hess_fns]
    dc = dc_ssgd_step(w_t, grads, M * eta, lam, ordering, hessians)
    plain = plain_step(w_t, grads, M * eta)
    return float(np.linalg.norm(dc - w)), float(np.linalg.norm(plain - w))


def batch_hessian(X, y, w, spec):
    X = np.asarray(X, dtype=np.float64)
    return np.mean([model.hessian(model.DatasetSample(x, c), w, spec) for x, c in zip(X, y)], axis=0)


def compare_to_sequential(w_t, batches, eta, lam, spec, ordering=Ordering.AS_GIVEN, exact_hessian=False):
    """:func:`unfold_vs_sequential` for a model and a list of ``(X, y)`` minibatches."""
    if not batches:
        raise ValueError("partition mismatch: no minibatches")
    for X, y in batches:
        if len(X) == 0 or len(X) != len(y):
            raise ValueError("partition mismatch: empty minibatch or X/y length differ")
    grad_fns = [lambda w, X=X, y=y: model.risk_gradient(X, y, w, spec) for X, y in batches]
    hess_fns = None
    if exact_hessian:
        hess_fns = [lambda w, X=X, y=y: batch_hessian(X, y, w, spec) for X, y in batches]
    return unfold_vs_sequential(w_t, grad_fns, eta, lam, ordering, hess_fns)


def write_comparison_csv(rows, path):
    """Rows are dicts keyed by :data:`CSV_COLUMNS`."""
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in rows:
            vals = []
            for c in CSV_COLUMNS:
                v = r[c]
                vals.append(repr(float(v)) if isinstance(v, float) else str(v))
            fh.write(",".join(vals) + "\n")
