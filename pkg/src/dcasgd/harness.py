"""Run experiments, persist their outputs, and drive comparisons and sweeps.

A run writes four files into its output directory:

``config.txt``      the fully resolved configuration (reparses to the same run)
``metrics.csv``     one row per evaluation, header ``METRICS_HEADER``
``trace.log``       one line per simulator event
``checkpoint.bin``  final state; mid-run checkpoints are ``checkpoint-<k>.bin``

Checkpoint layout: 8 magic bytes ``DCASGDCK``, a big-endian uint16 format
version, the 32-byte SHA-256 of the config, then a pickled state dict.
"""

import os
import pickle
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .config import ExperimentConfig, format_config
from .data import Dataset, draw_features, draw_labels, generate_synthetic, load_csv
from .dcssgd import Ordering, compare_to_sequential, write_comparison_csv
from .optim import DcAsgdAdaptive, DcAsgdConst
from .seeding import EVAL, MINIBATCH, PLANTED, PROBES, substream
from .sim import Simulation, write_metrics, write_trace

CHECKPOINT_MAGIC = b"DCASGDCK"
CHECKPOINT_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PROPERTY = 0, 1, 2, 3


class CheckpointError(ValueError):
    pass


# datasets

def planted_parameters(cfg):
    return substream(cfg.dataset.seed, PLANTED).normal(size=cfg.model.n) * cfg.dataset.wstar_scale


def resolve_datasets(cfg):
    """Training set and held-out evaluation set named by the config."""
    ds, spec = cfg.dataset, cfg.model
    if ds.kind == "synthetic":
        w_star = planted_parameters(cfg)
        train = generate_synthetic(spec.d, spec.K, ds.S, w_star, ds.feature_scale, ds.seed, spec)
        X = draw_features(ds.eval_size, spec.d, ds.feature_scale, ds.seed, purpose=EVAL)
        y = draw_labels(X, w_star, spec, substream(ds.seed, EVAL, 1))
        return train, Dataset(X, y, spec.K, w_star, "synthetic-eval")
    full = load_csv(ds.path, spec.K)
    if full.d != spec.d:
        raise ValueError(f"{ds.path}: {full.d} feature columns, model expects d={spec.d}")
    n_eval = int(round(full.S * ds.eval_fraction))
    if not 0 < n_eval < full.S:
        raise ValueError(f"{ds.path}: eval_fraction leaves an empty split")
    perm = substream(ds.seed, EVAL).permutation(full.S)
    return full.subset(np.sort(perm[n_eval:])), full.subset(np.sort(perm[:n_eval]))


# checkpoints

_ND = "__ndarray__"


def _encode(obj):
    # arrays become plain (dtype, shape, bytes) so the pickle does not depend
    # on which dtype instances happen to be shared
    if isinstance(obj, np.ndarray):
        return (_ND, obj.dtype.str, obj.shape, obj.tobytes())
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_encode(v) for v in obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, tuple) and len(obj) == 4 and obj[0] == _ND:
        return np.frombuffer(obj[3], dtype=np.dtype(obj[1])).reshape(obj[2]).copy()
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_decode(v) for v in obj)
    return obj


def write_checkpoint(path, cfg, state):
    payload = pickle.dumps(_encode(state), protocol=4)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">H", CHECKPOINT_VERSION))
        fh.write(bytes.fromhex(cfg.digest()))
        fh.write(payload)


def read_checkpoint(path, cfg=None):
    """Load a checkpoint; with ``cfg`` given, refuse one from another config."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack(">H", raw[8:10])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
    digest = raw[10:42].hex()
    if cfg is not None and digest != cfg.digest():
        raise CheckpointError(f"{path}: checkpoint was written by a different configuration")
    return digest, _decode(pickle.loads(raw[42:]))


# single runs

@dataclass
class RunOutcome:
    status: int
    output_dir: str
    result: object


def _prepare_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")


def run(cfg, resume_from=None, stop_after_checkpoints=None, record_trajectory=False):
    """Run one experiment and write its files.

    ``resume_from`` continues from a checkpoint file.  ``stop_after_checkpoints``
    halts after that many mid-run checkpoints (used to test resuming).
    """
    out = cfg.output_dir
    _prepare_dir(out)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))
    train, evalset = resolve_datasets(cfg)
    written = []

    class _Stop(Exception):
        pass

    def hook(sim):
        k = sim.ckpt_index + 1
        sim.ckpt_index = k
        path = os.path.join(out, f"checkpoint-{k}.bin")
        write_checkpoint(path, cfg, _full_state(sim))
        written.append(path)
        if stop_after_checkpoints is not None and len(written) >= stop_after_checkpoints:
            raise _Stop

    sim = Simulation(cfg, train, evalset, record_trajectory=record_trajectory, checkpoint_hook=hook)
    sim.ckpt_index = 0
    if resume_from is not None:
        _, state = read_checkpoint(resume_from, cfg)
        sim.load_state_dict(state["sim"])
        sim.ckpt_index = state["ckpt_index"]
    try:
        with np.errstate(all="ignore"):
            result = sim.run()
    except _Stop:
        return RunOutcome(EXIT_OK, out, sim.result())
    write_metrics(result.metrics, os.path.join(out, "metrics.csv"))
    write_trace(result.trace, os.path.join(out, "trace.log"))
    write_checkpoint(os.path.join(out, "checkpoint.bin"), cfg, _full_state(sim))
    return RunOutcome(EXIT_DIVERGED if result.diverged else EXIT_OK, out, result)


def _full_state(sim):
    return {"sim": sim.state_dict(), "ckpt_index": sim.ckpt_index}


def simulate(cfg, record_trajectory=False):
    """Run in memory without writing files."""
    train, evalset = resolve_datasets(cfg)
    with np.errstate(all="ignore"):
        return Simulation(cfg, train, evalset, record_trajectory=record_trajectory).run()


# comparisons

def _label(i, cfg):
    return f"{i}:{cfg.optimizer.name}"


def _as_of(records, key, x):
    """Last record whose ``key`` is <= x (curves are step functions)."""
    chosen = None
    for r in records:
        if getattr(r, key) <= x + 1e-12:
            chosen = r
        else:
            break
    return chosen


def compare(cfgs, aligned_by="passes", out_dir=None, results=None):
    """Align eval-error and train-risk curves of several runs on one grid.

    The grid is the union of all record positions (passes or simulated
    time); each curve is read as a step function.  Returns
    ``(header, rows, summary)`` and writes ``comparison.csv`` and
    ``summary.csv`` when ``out_dir`` is given.
    """
    if not cfgs:
        raise ValueError("nothing to compare")
    if aligned_by not in ("passes", "sim_time"):
        raise ValueError("aligned_by must be 'passes' or 'sim_time'")
    first = cfgs[0]
    for c in cfgs[1:]:
        if c.model != first.model or c.dataset != first.dataset:
            raise ValueError("mismatched dataset/model: compared runs must share both")
    if results is None:
        results = [simulate(c) for c in cfgs]
    key = aligned_by
    grid = sorted({getattr(r, key) for res in results for r in res.metrics})
    header = [aligned_by]
    for i, c in enumerate(cfgs):
        header += [f"{_label(i, c)}.eval_error", f"{_label(i, c)}.train_risk"]
    rows = []
    for x in grid:
        row = [x]
        for res in results:
            rec = _as_of(res.metrics, key, x)
            row += [rec.eval_error, rec.train_risk] if rec else [None, None]
        rows.append(row)
    summary = [(_label(i, c), c.optimizer.name, res.metrics[-1].passes, res.metrics[-1].train_risk,
                res.metrics[-1].eval_error, int(res.diverged)) for i, (c, res) in enumerate(zip(cfgs, results))]
    if out_dir is not None:
        _prepare_dir(out_dir)
        _write_csv(os.path.join(out_dir, "comparison.csv"), header, rows)
        _write_csv(os.path.join(out_dir, "summary.csv"),
                   ["run", "optimizer", "final_pass", "final_train_risk", "final_eval_error", "diverged"], summary)
    return header, rows, summary


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_cell(v) for v in r) + "\n")


SWEEP_CURVE_HEADER = ["lambda", "pass", "sim_time", "train_risk", "eval_error"]
SWEEP_SUMMARY_HEADER = ["lambda", "final_train_risk", "final_eval_error", "diverged"]


def lambda_sweep(base, lams, out_dir=None):
    """Rerun a delay-compensated config once per lambda0 value."""
    lams = list(lams)
    if not lams:
        raise ValueError("empty lambda list")
    if not isinstance(base.optimizer, (DcAsgdConst, DcAsgdAdaptive)):
        raise ValueError("lambda sweep needs optimizer.kind dc-asgd-c or dc-asgd-a")
    curves, summary, results = [], [], []
    for lam in lams:
        cfg = replace(base, optimizer=replace(base.optimizer, lambda0=float(lam)))
        res = simulate(cfg)
        results.append(res)
        curves += [[float(lam), r.passes, r.sim_time, r.train_risk, r.eval_error] for r in res.metrics]
        last = res.metrics[-1]
        summary.append([float(lam), last.train_risk, last.eval_error, int(res.diverged)])
    if out_dir is not None:
        _prepare_dir(out_dir)
        _write_csv(os.path.join(out_dir, "lambda_sweep.csv"), SWEEP_CURVE_HEADER, curves)
        _write_csv(os.path.join(out_dir, "lambda_summary.csv"), SWEEP_SUMMARY_HEADER, summary)
    return curves, summary, results


def dcssgd_comparison(cfg, trials=200, M=8, eta=0.05, lam=1.0, ordering=Ordering.AS_GIVEN,
                      batch=16, offset=0.05, out_path=None):
    """Distance of compensated and plain synchronous rounds to sequential SGD.

    Each trial perturbs the training-risk minimizer by Gaussian noise of
    scale ``offset`` and draws M disjoint minibatches of size ``batch``.
    """
    train, _ = resolve_datasets(cfg)
    spec = cfg.model
    if M * batch > train.S:
        raise ValueError("not enough samples for M disjoint minibatches")
    w_hat = model.fit_newton(train.X, train.y, spec)
    rng = substream(cfg.seed, PROBES)
    mb = substream(cfg.seed, MINIBATCH)
    ordering = Ordering(ordering)
    rows = []
    for trial in range(trials):
        w = w_hat + rng.normal(size=spec.n) * offset
        idx = mb.choice(train.S, size=M * batch, replace=False).reshape(M, batch)
        d_dc, d_plain = compare_to_sequential(w, [(train.X[i], train.y[i]) for i in idx], eta, lam, spec, ordering)
        rows.append({"trial": trial, "dist_dc": d_dc, "dist_plain": d_plain, "M": M, "eta": float(eta),
                     "lambda": float(lam), "ordering": ordering.value})
    if out_path is not None:
        write_comparison_csv(rows, out_path)
    return rows


def default_config(**changes):
    return replace(ExperimentConfig(), **changes)
