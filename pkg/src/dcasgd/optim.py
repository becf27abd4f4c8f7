"""Update rules: SGD, delay-compensated SGD, adaptive lambda, lr schedule."""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class Sequential:
    name = "sequential"


@dataclass(frozen=True)
class Asgd:
    name = "asgd"


@dataclass(frozen=True)
class Ssgd:
    name = "ssgd"


@dataclass(frozen=True)
class DcAsgdConst:
    lambda0: float
    name = "dc-asgd-c"

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")


@dataclass(frozen=True)
class DcAsgdAdaptive:
    lambda0: float
    m: float = 0.95
    eps: float = DEFAULT_EPS
    name = "dc-asgd-a"

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")
        if not 0.0 <= self.m < 1.0:
            raise ValueError("m must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


OPTIMIZERS = {cls.name: cls for cls in (Sequential, Asgd, Ssgd, DcAsgdConst, DcAsgdAdaptive)}


def is_delay_compensated(kind):
    return isinstance(kind, (DcAsgdConst, DcAsgdAdaptive))


@dataclass
class LambdaControllerState:
    mean_square: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), 0)


@dataclass
class LrSchedule:
    """Step decay: divide ``eta0`` by ``decay_factor`` at each listed epoch."""

    eta0: float
    decay_epochs: tuple = ()
    decay_factor: float = 10.0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.eta0 <= 0:
            raise ValueError("eta0 must be > 0")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError("decay epochs must be strictly increasing")


def _check_dims(*vecs):
    n = np.shape(vecs[0])
    for v in vecs[1:]:
        if np.shape(v) != n:
            raise ValueError(f"dimension mismatch: {np.shape(v)} vs {n}")


def sgd_step(w, g, eta):
    _check_dims(w, g)
    return w - eta * g


def compensated_gradient(g, w_current, w_backup, lam):
    """``g + lam * g * g * (w_current - w_backup)``, elementwise.

    ``lam`` may be a scalar or a per-coordinate vector.
    """
    _check_dims(g, w_current, w_backup)
    return g + lam * g * g * (w_current - w_backup)


def dc_asgd_step(w_current, g, w_backup, eta, lam):
    return w_current - eta * compensated_gradient(g, w_current, w_backup, lam)


def compensated_gradient_exact_hessian(g, H, dw):
    """First-order Taylor estimate ``g + H dw`` of the gradient at ``w + dw``."""
    g = np.asarray(g, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (g.size, g.size) or np.shape(dw) != g.shape:
        raise ValueError("dimension mismatch")
    return g + H @ dw


def adaptive_lambda(state, g, lambda0, m, eps=DEFAULT_EPS):
    """One step of the moving-average lambda controller.

    ``mean_square <- m * mean_square + (1 - m) * g**2`` and the returned
    per-coordinate lambda is ``lambda0 / sqrt(mean_square + eps)``.
    The input state is not modified.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError("m must lie in [0, 1)")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    ms = m * state.mean_square + (1.0 - m) * (g * g)
    new = LambdaControllerState(ms, state.step_count + 1)
    return new, lambda0 / np.sqrt(ms + eps)


def lr_at(schedule, epoch):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    drops = sum(1 for e in schedule.decay_epochs if e <= epoch)
    return schedule.eta0 / schedule.decay_factor ** drops
