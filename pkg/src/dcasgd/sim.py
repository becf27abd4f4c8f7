"""Discrete-event simulation of a parameter server with M workers.

Time is simulated, not measured.  Each worker repeats a cycle: pull the
current parameters, spend a compute time given by the delay model, then
push a minibatch gradient evaluated at the pulled copy.  Events are kept in
a heap ordered by ``(time, seq)`` where ``seq`` is the scheduling order, so
simultaneous events resolve the same way on every run.

With the round-robin model, worker m first pulls at time m and every
compute takes M units.  After the first M pushes, exactly one gradient
arrives per unit of time and each one is exactly M - 1 versions stale.
"""

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import model
from .config import StochasticCompute
from .data import repartition
from .optim import (
    Asgd, DcAsgdAdaptive, DcAsgdConst, LambdaControllerState, Sequential, Ssgd,
    adaptive_lambda, dc_asgd_step, lr_at, sgd_step,
)
from .seeding import COMPUTE, INIT, substream

DIVERGENCE_LOSS = 1e10
PULL, GRAD = 0, 1

METRICS_HEADER = ("pass", "sim_time", "train_risk", "eval_error", "mean_tau", "max_tau", "lr", "lambda_mean")
TRACE_HEADER = ("time", "kind", "worker", "version", "server_t", "tau")
TRACE_MAGIC = "# dcasgd-trace v1"


class ProtocolError(RuntimeError):
    pass


@dataclass
class GradientPacket:
    worker: int
    grad: np.ndarray
    based_on_version: int
    minibatch_id: int


class ParameterServer:
    """Server state plus the pull / gradient / flush operations.

    ``w_bak[m]`` is the copy worker m last pulled and ``bak_version[m]`` its
    version.  SSGD gradients wait in ``pending`` until all M have arrived.
    """

    def __init__(self, w0, M, kind):
        self.w = np.array(w0, dtype=np.float64)
        self.t = 0
        self.M = M
        self.kind = kind
        self.w_bak = {}
        self.bak_version = {}
        self.pending = {}
        self.lam_state = LambdaControllerState.zeros(self.w.size)
        self.last_lambda = 0.0
        # reserved for a momentum variant; unused by the current update rules
        self.velocity = None

    def _check_worker(self, m):
        if not 0 <= m < self.M:
            raise ProtocolError(f"unknown worker {m}")

    def on_pull(self, m):
        self._check_worker(m)
        if isinstance(self.kind, Ssgd) and m in self.pending:
            raise ProtocolError(f"worker {m} pulled while its gradient waits at the barrier")
        snap = self.w.copy()
        self.w_bak[m] = snap
        self.bak_version[m] = self.t
        return snap.copy(), self.t

    def on_gradient(self, pkt, eta):
        """Apply (or buffer) one gradient.  Returns True if ``w`` changed."""
        m = pkt.worker
        self._check_worker(m)
        if m not in self.w_bak:
            raise ProtocolError(f"gradient from worker {m} without a prior pull")
        if pkt.based_on_version != self.bak_version[m]:
            raise ProtocolError(
                f"worker {m} sent a gradient for version {pkt.based_on_version}, "
                f"backup holds version {self.bak_version[m]}")
        if pkt.grad.shape != self.w.shape:
            raise ProtocolError("gradient dimension mismatch")
        kind = self.kind
        if isinstance(kind, Ssgd):
            if pkt.based_on_version != self.t:
                raise ProtocolError("synchronous gradient is stale")
            if m in self.pending:
                raise ProtocolError(f"worker {m} pushed twice in one round")
            self.pending[m] = pkt
            if len(self.pending) == self.M:
                self.flush(eta)
                return True
            return False
        if isinstance(kind, DcAsgdConst):
            self.w = dc_asgd_step(self.w, pkt.grad, self.w_bak[m], eta, kind.lambda0)
            self.last_lambda = float(kind.lambda0)
        elif isinstance(kind, DcAsgdAdaptive):
            self.lam_state, lam = adaptive_lambda(self.lam_state, pkt.grad, kind.lambda0, kind.m, kind.eps)
            self.w = dc_asgd_step(self.w, pkt.grad, self.w_bak[m], eta, lam)
            self.last_lambda = float(np.mean(lam))
        else:
            self.w = sgd_step(self.w, pkt.grad, eta)
        del self.w_bak[m], self.bak_version[m]
        self.t += 1
        return True

    def flush(self, eta):
        """SSGD barrier: one step along the average of the buffered gradients."""
        if len(self.pending) != self.M:
            raise ProtocolError("flush before all workers reported")
        if len({p.based_on_version for p in self.pending.values()}) != 1:
            raise ProtocolError("buffered gradients are based on different versions")
        g = np.mean([self.pending[m].grad for m in sorted(self.pending)], axis=0)
        self.w = sgd_step(self.w, g, eta)
        self.pending.clear()
        self.w_bak.clear()
        self.bak_version.clear()
        self.t += 1

    def state_dict(self):
        return {
            "w": self.w.copy(), "t": self.t, "M": self.M,
            "w_bak": {k: v.copy() for k, v in self.w_bak.items()},
            "bak_version": dict(self.bak_version),
            "pending": {k: (p.worker, p.grad.copy(), p.based_on_version, p.minibatch_id)
                        for k, p in self.pending.items()},
            "mean_square": self.lam_state.mean_square.copy(),
            "lam_steps": self.lam_state.step_count,
            "last_lambda": self.last_lambda,
            "velocity": None if self.velocity is None else self.velocity.copy(),
        }

    def load_state_dict(self, s):
        self.w = s["w"].copy()
        self.t = s["t"]
        self.M = s["M"]
        self.w_bak = {k: v.copy() for k, v in s["w_bak"].items()}
        self.bak_version = dict(s["bak_version"])
        self.pending = {k: GradientPacket(*v) for k, v in s["pending"].items()}
        self.lam_state = LambdaControllerState(s["mean_square"].copy(), s["lam_steps"])
        self.last_lambda = s["last_lambda"]
        v = s.get("velocity")
        self.velocity = None if v is None else v.copy()


def next_event(delay, m, M, now, rng, phase=PULL):
    """Time and kind of worker m's next event after ``phase`` at ``now``.

    A pull is followed by the gradient push after one compute duration.
    A push is followed immediately by the next pull (server overhead is
    added by the simulation).
    """
    if phase == PULL:
        return now + delay.duration(m, M, rng), GRAD
    return now, PULL


@dataclass
class MetricsRecord:
    passes: float
    sim_time: float
    train_risk: float
    eval_error: float
    mean_tau: float
    max_tau: int
    lr: float
    lambda_mean: float

    def row(self):
        return (repr(self.passes), repr(self.sim_time), repr(self.train_risk), repr(self.eval_error),
                repr(self.mean_tau), str(self.max_tau), repr(self.lr), repr(self.lambda_mean))


def parse_metrics(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != METRICS_HEADER:
        raise ValueError(f"{path}: not a metrics file")
    return [_parse_metrics_row(line) for line in lines[1:]]


def _parse_metrics_row(line):
    v = line.split(",")
    return MetricsRecord(float(v[0]), float(v[1]), float(v[2]), float(v[3]),
                         float(v[4]), int(v[5]), float(v[6]), float(v[7]))


def _parse_trace_row(line):
    f = line.split("\t")
    if len(f) != 6:
        raise ValueError("expected 6 fields")
    return (float(f[0]), f[1], *[None if x == "-" else int(x) for x in f[2:]])


def write_metrics(records, path):
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in records:
            fh.write(",".join(r.row()) + "\n")


def _fmt(v):
    return "-" if v is None else (repr(v) if isinstance(v, float) else str(v))


def write_trace(rows, path):
    with open(path, "w") as fh:
        fh.write(TRACE_MAGIC + "\n")
        fh.write("\t".join(TRACE_HEADER) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(v) for v in r) + "\n")


def read_trace(path):
    """Parse a trace file into tuples ``(time, kind, worker, version, server_t, tau)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or lines[0] != TRACE_MAGIC or tuple(lines[1].split("\t")) != TRACE_HEADER:
        raise ValueError(f"{path}: not a trace file")
    rows = []
    for lineno, line in enumerate(lines[2:], 3):
        try:
            rows.append(_parse_trace_row(line))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return rows


def staleness_stats(trace_rows, warmup=0):
    """Staleness of applied asynchronous gradients, skipping the first ``warmup``."""
    taus = [r[5] for r in trace_rows if r[1] == "grad" and r[5] is not None][warmup:]
    hist = dict(sorted(Counter(taus).items()))
    return {
        "count": len(taus),
        "mean": float(np.mean(taus)) if taus else 0.0,
        "max": max(taus) if taus else 0,
        "histogram": hist,
    }


@dataclass
class WorkerState:
    epoch: int = 0
    cursor: int = 0
    batches: int = 0
    snapshot: np.ndarray = None
    version: int = -1
    batch: np.ndarray = None


@dataclass
class RunResult:
    metrics: list
    trace: list
    w: np.ndarray
    diverged: bool
    updates: int
    trajectory: list = field(default_factory=list)


class Simulation:
    """One training run.  ``step()`` processes one event; ``run()`` loops.

    ``checkpoint_hook(sim)`` is called every ``checkpoint_every`` passes,
    between events, so ``state_dict()`` there captures a resumable state.
    """

    def __init__(self, cfg, train, evalset, record_trajectory=False, checkpoint_hook=None):
        if isinstance(cfg.optimizer, Sequential) and cfg.M != 1:
            raise ValueError("the sequential optimizer needs exactly 1 worker")
        self.cfg = cfg
        self.spec = cfg.model
        self.train = train
        self.evalset = evalset
        self.record_trajectory = record_trajectory
        self.checkpoint_hook = checkpoint_hook
        n = self.spec.n
        w0 = substream(cfg.seed, INIT).normal(size=n) * cfg.init_scale
        self.server = ParameterServer(w0, cfg.M, cfg.optimizer)
        dseed = cfg.seed
        if isinstance(cfg.delay, StochasticCompute) and cfg.delay.seed is not None:
            dseed = cfg.delay.seed
        self.rngs = [substream(dseed, COMPUTE, m) for m in range(cfg.M)]
        self.workers = [WorkerState() for _ in range(cfg.M)]
        self.heap = []
        self.seq = 0
        self.now = 0.0
        self.busy_until = 0.0
        self.consumed = 0
        self.pending_samples = 0
        self.updates = 0
        self.budget = cfg.epochs * train.S
        self.next_record = 0.0
        self.next_ckpt = cfg.checkpoint_every if cfg.checkpoint_every > 0 else math.inf
        self.win_taus = []
        self.win_lams = []
        self.metrics = []
        self.trace = []
        self.trajectory = []
        self.done = False
        self.diverged = False
        self._plans = {}
        self._record()
        for m in range(cfg.M):
            self._schedule(cfg.delay.start_time(m, cfg.M), PULL, m)

    # bookkeeping

    def _schedule(self, time, kind, m):
        heapq.heappush(self.heap, (float(time), self.seq, kind, m))
        self.seq += 1

    @property
    def passes(self):
        return self.consumed / self.train.S

    def lr(self):
        return lr_at(self.cfg.schedule, int(math.floor(self.passes)))

    def _plan(self, epoch):
        if epoch not in self._plans:
            if len(self._plans) > 4:
                self._plans.pop(min(self._plans))
            self._plans[epoch] = repartition(self.train.S, self.cfg.M, epoch, self.cfg.seed)
        return self._plans[epoch].assignment

    def _next_batch(self, ws, m):
        chunk = self._plan(ws.epoch)[m]
        if ws.cursor >= len(chunk):
            ws.epoch += 1
            ws.cursor = 0
            chunk = self._plan(ws.epoch)[m]
        idx = chunk[ws.cursor:ws.cursor + self.cfg.minibatch]
        ws.cursor += len(idx)
        ws.batches += 1
        return idx

    def _record(self):
        w = self.server.w
        with np.errstate(all="ignore"):
            tr = model.risk(self.train.X, self.train.y, w, self.spec)
            raw = model.raw_risk(self.train.X, self.train.y, w, self.spec)
            er = model.error_rate(self.evalset.X, self.evalset.y, w, self.spec)
        taus = self.win_taus
        kind = self.cfg.optimizer
        if isinstance(kind, DcAsgdConst):
            lam = float(kind.lambda0)
        elif isinstance(kind, DcAsgdAdaptive):
            lam = float(np.mean(self.win_lams)) if self.win_lams else 0.0
        else:
            lam = 0.0
        self.metrics.append(MetricsRecord(
            self.passes, self.now, tr, er,
            float(np.mean(taus)) if taus else 0.0, int(max(taus)) if taus else 0,
            self.lr(), lam))
        self.win_taus = []
        self.win_lams = []
        # the reported risk is capped by the probability floor, so test the raw value
        if not np.isfinite(raw) or raw > DIVERGENCE_LOSS:
            self._diverge()

    def _diverge(self):
        if not self.diverged:
            self.diverged = True
            self.done = True
            self.trace.append((self.now, "diverged", None, None, self.server.t, None))

    def _after_update(self):
        self.updates += 1
        if self.record_trajectory:
            self.trajectory.append(self.server.w.copy())
        if not np.all(np.isfinite(self.server.w)):
            self._record()
            self._diverge()
            return
        if self.consumed >= self.budget:
            self._record()
            self.done = True
            return
        if self.passes >= self.next_record + self.cfg.eval_every - 1e-12:
            while self.next_record + self.cfg.eval_every <= self.passes + 1e-12:
                self.next_record += self.cfg.eval_every
            self._record()
        if self.passes >= self.next_ckpt - 1e-12:
            while self.next_ckpt <= self.passes + 1e-12:
                self.next_ckpt += self.cfg.checkpoint_every
            self._ckpt_due = True

    def _server_finish(self):
        cost = self.cfg.server_overhead
        if isinstance(self.cfg.optimizer, (DcAsgdConst, DcAsgdAdaptive)):
            cost += self.cfg.dc_overhead
        self.busy_until = max(self.now, self.busy_until) + cost
        return self.busy_until

    # events

    def step(self):
        """Process one event.  A due checkpoint is taken once the event is complete."""
        self._ckpt_due = False
        self._step()
        if self._ckpt_due and not self.done and self.checkpoint_hook is not None:
            self.checkpoint_hook(self)
        return True

    def _step(self):
        if self.done:
            return False
        if not self.heap:
            raise ProtocolError("event queue ran dry")
        time, _, kind, m = heapq.heappop(self.heap)
        self.now = time
        ws = self.workers[m]
        srv = self.server
        if kind == PULL:
            ws.snapshot, ws.version = srv.on_pull(m)
            ws.batch = self._next_batch(ws, m)
            self.trace.append((time, "pull", m, ws.version, srv.t, None))
            self._schedule(*next_event(self.cfg.delay, m, self.cfg.M, time, self.rngs[m]), m)
            return True

        with np.errstate(all="ignore"):
            g = model.risk_gradient(self.train.X[ws.batch], self.train.y[ws.batch], ws.snapshot, self.spec)
        nb = len(ws.batch)
        pkt = GradientPacket(m, g, ws.version, ws.batches)
        tau = srv.t - ws.version
        eta = self.lr()
        t_before = srv.t
        with np.errstate(all="ignore"):
            applied = srv.on_gradient(pkt, eta)
        self.trace.append((time, "grad", m, ws.version, t_before, tau))
        ws.snapshot, ws.batch = None, None

        if isinstance(self.cfg.optimizer, Ssgd):
            self.pending_samples += nb
            if applied:
                self.trace.append((time, "flush", None, t_before, srv.t, None))
                self.consumed += self.pending_samples
                self.pending_samples = 0
                self.win_taus.append(0)
                ready = self._server_finish()
                self._after_update()
                if not self.done:
                    for k in range(self.cfg.M):
                        self._schedule(ready, PULL, k)
            return True

        self.consumed += nb
        self.win_taus.append(tau)
        if isinstance(self.cfg.optimizer, (DcAsgdConst, DcAsgdAdaptive)):
            self.win_lams.append(srv.last_lambda)
        ready = self._server_finish()
        self._after_update()
        if not self.done:
            self._schedule(ready, PULL, m)
        return True

    def run(self, max_events=None):
        n = 0
        while not self.done and (max_events is None or n < max_events):
            self.step()
            n += 1
        return self.result()

    def result(self):
        return RunResult(self.metrics, self.trace, self.server.w.copy(), self.diverged, self.updates,
                         self.trajectory)

    # checkpointing

    def state_dict(self):
        return {
            "server": self.server.state_dict(),
            "rngs": [r.bit_generator.state for r in self.rngs],
            "workers": [dict(vars(w)) for w in self.workers],
            "heap": list(self.heap),
            "seq": self.seq, "now": self.now, "busy_until": self.busy_until,
            "consumed": self.consumed, "updates": self.updates,
            "pending_samples": self.pending_samples,
            "next_record": self.next_record, "next_ckpt": self.next_ckpt,
            "win_taus": list(self.win_taus), "win_lams": list(self.win_lams),
            # text form keeps the pickle independent of object identity
            "metrics": "\n".join(",".join(r.row()) for r in self.metrics),
            "trace": "\n".join("\t".join(_fmt(v) for v in r) for r in self.trace),
            "done": self.done, "diverged": self.diverged,
        }

    def load_state_dict(self, s):
        self.server.load_state_dict(s["server"])
        for r, st in zip(self.rngs, s["rngs"]):
            r.bit_generator.state = st
        self.workers = [WorkerState(**w) for w in s["workers"]]
        self.heap = list(s["heap"])
        heapq.heapify(self.heap)
        for k in ("seq", "now", "busy_until", "consumed", "updates", "pending_samples",
                  "next_record", "next_ckpt", "done", "diverged"):
            setattr(self, k, s[k])
        self.win_taus = list(s["win_taus"])
        self.win_lams = list(s["win_lams"])
        self.metrics = [_parse_metrics_row(line) for line in s["metrics"].split("\n") if line]
        self.trace = [_parse_trace_row(line) for line in s["trace"].split("\n") if line]


def run_simulation(cfg, train, evalset, **kw):
    return Simulation(cfg, train, evalset, **kw).run()
