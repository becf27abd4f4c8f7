"""Experiment configuration in a flat ``section.key = value`` text format.

Example::

    seed = 3
    optimizer.kind = dc-asgd-a
    optimizer.lambda0 = 2.0
    schedule.decay_epochs = 80,120

Blank lines and ``#`` comments are ignored.  :func:`format_config` writes
every key in a fixed order, so formatting a parsed config and parsing it
again yields an equal config.
"""

import hashlib
from dataclasses import dataclass, field, replace

from .model import ModelSpec
from .optim import OPTIMIZERS, Asgd, DcAsgdAdaptive, DcAsgdConst, LrSchedule, Sequential, Ssgd


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))


@dataclass(frozen=True)
class RoundRobin:
    """Every cycle takes M time units; worker m starts at time m."""

    name = "round-robin"

    def start_time(self, m, M):
        return float(m)

    def duration(self, m, M, rng):
        return float(M)


@dataclass(frozen=True)
class FixedComputeTime:
    times: tuple
    name = "fixed"

    def start_time(self, m, M):
        return 0.0

    def duration(self, m, M, rng):
        return float(self.times[m])


@dataclass(frozen=True)
class StochasticCompute:
    """Exponentially distributed compute times with a per-worker mean."""

    means: tuple
    seed: int = None
    name = "stochastic"

    def start_time(self, m, M):
        return 0.0

    def duration(self, m, M, rng):
        return float(rng.exponential(self.means[m]))


DELAY_MODELS = {c.name: c for c in (RoundRobin, FixedComputeTime, StochasticCompute)}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    S: int = 10000
    eval_size: int = 2000
    feature_scale: float = 1.0
    wstar_scale: float = 1.0
    seed: int = 0
    path: str = ""
    eval_fraction: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec.softmax(20, 10))
    optimizer: object = field(default_factory=Asgd)
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.5))
    M: int = 1
    delay: object = field(default_factory=RoundRobin)
    server_overhead: float = 0.0
    dc_overhead: float = 0.0
    minibatch: int = 32
    epochs: int = 10
    eval_every: float = 1.0
    checkpoint_every: float = 0.0
    init_scale: float = 0.0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seed: int = 0
    output_dir: str = "run"

    def with_(self, **changes):
        return replace(self, **changes)

    def digest(self):
        """Hash of everything that influences the numbers (not output_dir)."""
        text = format_config(replace(self, output_dir=""))
        return hashlib.sha256(text.encode()).hexdigest()


def _floats(values):
    return ",".join(repr(float(v)) for v in values)


def format_config(cfg):
    m, opt, sch, dl, ds = cfg.model, cfg.optimizer, cfg.schedule, cfg.delay, cfg.dataset
    lines = [
        f"seed = {cfg.seed}",
        f"output_dir = {cfg.output_dir}",
        f"model.kind = {m.kind}",
        f"model.d = {m.d}",
        f"model.h = {m.h}",
        f"model.K = {m.K}",
        f"model.init_scale = {cfg.init_scale!r}",
        f"optimizer.kind = {opt.name}",
    ]
    if isinstance(opt, (DcAsgdConst, DcAsgdAdaptive)):
        lines.append(f"optimizer.lambda0 = {float(opt.lambda0)!r}")
    if isinstance(opt, DcAsgdAdaptive):
        lines += [f"optimizer.m = {float(opt.m)!r}", f"optimizer.eps = {float(opt.eps)!r}"]
    lines += [
        f"schedule.eta0 = {float(sch.eta0)!r}",
        f"schedule.decay_epochs = {','.join(str(e) for e in sch.decay_epochs)}",
        f"schedule.decay_factor = {float(sch.decay_factor)!r}",
        f"cluster.workers = {cfg.M}",
        f"delay.kind = {dl.name}",
    ]
    if isinstance(dl, FixedComputeTime):
        lines.append(f"delay.times = {_floats(dl.times)}")
    if isinstance(dl, StochasticCompute):
        lines.append(f"delay.means = {_floats(dl.means)}")
        if dl.seed is not None:
            lines.append(f"delay.seed = {dl.seed}")
    lines += [
        f"delay.server_overhead = {float(cfg.server_overhead)!r}",
        f"delay.dc_overhead = {float(cfg.dc_overhead)!r}",
        f"train.minibatch = {cfg.minibatch}",
        f"train.epochs = {cfg.epochs}",
        f"train.eval_every = {float(cfg.eval_every)!r}",
        f"train.checkpoint_every = {float(cfg.checkpoint_every)!r}",
        f"dataset.kind = {ds.kind}",
    ]
    if ds.kind == "synthetic":
        lines += [
            f"dataset.S = {ds.S}",
            f"dataset.eval_size = {ds.eval_size}",
            f"dataset.feature_scale = {float(ds.feature_scale)!r}",
            f"dataset.wstar_scale = {float(ds.wstar_scale)!r}",
            f"dataset.seed = {ds.seed}",
        ]
    else:
        lines += [f"dataset.path = {ds.path}", f"dataset.eval_fraction = {float(ds.eval_fraction)!r}",
                  f"dataset.seed = {ds.seed}"]
    return "\n".join(lines) + "\n"


KNOWN_KEYS = {
    "seed", "output_dir",
    "model.kind", "model.d", "model.h", "model.K", "model.init_scale",
    "optimizer.kind", "optimizer.lambda0", "optimizer.m", "optimizer.eps",
    "schedule.eta0", "schedule.decay_epochs", "schedule.decay_factor",
    "cluster.workers",
    "delay.kind", "delay.times", "delay.means", "delay.seed", "delay.server_overhead", "delay.dc_overhead",
    "train.minibatch", "train.epochs", "train.eval_every", "train.checkpoint_every",
    "dataset.kind", "dataset.S", "dataset.eval_size", "dataset.feature_scale", "dataset.wstar_scale",
    "dataset.seed", "dataset.path", "dataset.eval_fraction",
}


def parse_pairs(text):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([(f"line {lineno}", "expected 'key = value'")])
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def _getter(pairs, errors):
    def get(key, conv, default=None, required=False):
        if key not in pairs:
            if required:
                errors.append((key, "missing"))
            return default
        raw = pairs[key]
        try:
            return conv(raw)
        except (TypeError, ValueError):
            errors.append((key, f"cannot parse {raw!r}"))
            return default
    return get


def _int_list(raw):
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _float_list(raw):
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _int(raw):
    v = float(raw)
    if v != int(v):
        raise ValueError(raw)
    return int(v)


def from_pairs(pairs):
    errors = [(k, "unknown key") for k in pairs if k not in KNOWN_KEYS]
    get = _getter(pairs, errors)
    base = ExperimentConfig()

    def positive(key, value, strict=True):
        if value is not None and (value <= 0 if strict else value < 0):
            errors.append((key, "must be > 0" if strict else "must be >= 0"))

    kind = get("model.kind", str, "softmax")
    d, h, K = get("model.d", _int, 20), get("model.h", _int, 0), get("model.K", _int, 10)
    spec = None
    try:
        spec = ModelSpec(kind, d, K, h if kind == "mlp" else 0)
    except ValueError as exc:
        errors.append(("model", str(exc)))

    okind = get("optimizer.kind", str, "asgd")
    lam0 = get("optimizer.lambda0", float, 0.04)
    mom = get("optimizer.m", float, 0.95)
    eps = get("optimizer.eps", float, 1e-7)
    optimizer = None
    if okind not in OPTIMIZERS:
        errors.append(("optimizer.kind", f"unknown optimizer {okind!r}; choose from {sorted(OPTIMIZERS)}"))
    else:
        try:
            if okind == "dc-asgd-c":
                optimizer = DcAsgdConst(lam0)
            elif okind == "dc-asgd-a":
                optimizer = DcAsgdAdaptive(lam0, mom, eps)
            else:
                optimizer = OPTIMIZERS[okind]()
        except ValueError as exc:
            errors.append(("optimizer", str(exc)))

    schedule = None
    try:
        schedule = LrSchedule(get("schedule.eta0", float, 0.5),
                              get("schedule.decay_epochs", _int_list, ()),
                              get("schedule.decay_factor", float, 10.0))
    except ValueError as exc:
        errors.append(("schedule", str(exc)))

    M = get("cluster.workers", _int, 1)
    positive("cluster.workers", M)

    dkind = get("delay.kind", str, "round-robin")
    delay = None
    if dkind == "round-robin":
        delay = RoundRobin()
    elif dkind == "fixed":
        times = get("delay.times", _float_list, None, required=True)
        if times is not None:
            if M is not None and len(times) != M:
                errors.append(("delay.times", f"need one time per worker ({M}), got {len(times)}"))
            elif any(t <= 0 for t in times):
                errors.append(("delay.times", "all times must be > 0"))
            else:
                delay = FixedComputeTime(times)
    elif dkind == "stochastic":
        means = get("delay.means", _float_list, None, required=True)
        dseed = get("delay.seed", _int, None)
        if means is not None:
            if M is not None and len(means) != M:
                errors.append(("delay.means", f"need one mean per worker ({M}), got {len(means)}"))
            elif any(t <= 0 for t in means):
                errors.append(("delay.means", "all means must be > 0"))
            else:
                delay = StochasticCompute(means, dseed)
    else:
        errors.append(("delay.kind", f"unknown delay model {dkind!r}; choose from {sorted(DELAY_MODELS)}"))

    so = get("delay.server_overhead", float, 0.0)
    dco = get("delay.dc_overhead", float, 0.0)
    positive("delay.server_overhead", so, strict=False)
    positive("delay.dc_overhead", dco, strict=False)

    minibatch = get("train.minibatch", _int, 32)
    epochs = get("train.epochs", _int, 10)
    eval_every = get("train.eval_every", float, 1.0)
    ckpt = get("train.checkpoint_every", float, 0.0)
    init_scale = get("model.init_scale", float, 0.0)
    positive("train.minibatch", minibatch)
    positive("train.epochs", epochs)
    positive("train.eval_every", eval_every)
    positive("train.checkpoint_every", ckpt, strict=False)
    positive("model.init_scale", init_scale, strict=False)

    dsk = get("dataset.kind", str, "synthetic")
    ds = DatasetConfig(
        kind=dsk,
        S=get("dataset.S", _int, 10000),
        eval_size=get("dataset.eval_size", _int, 2000),
        feature_scale=get("dataset.feature_scale", float, 1.0),
        wstar_scale=get("dataset.wstar_scale", float, 1.0),
        seed=get("dataset.seed", _int, 0),
        path=get("dataset.path", str, ""),
        eval_fraction=get("dataset.eval_fraction", float, 0.2),
    )
    if dsk not in ("synthetic", "csv"):
        errors.append(("dataset.kind", f"unknown dataset kind {dsk!r}"))
    if dsk == "synthetic":
        positive("dataset.S", ds.S)
        positive("dataset.eval_size", ds.eval_size)
        positive("dataset.feature_scale", ds.feature_scale)
        positive("dataset.wstar_scale", ds.wstar_scale, strict=False)
        if M is not None and ds.S is not None and M > ds.S:
            errors.append(("cluster.workers", f"more workers ({M}) than samples ({ds.S})"))
    elif dsk == "csv":
        if not ds.path:
            errors.append(("dataset.path", "missing"))
        if ds.eval_fraction is not None and not 0.0 < ds.eval_fraction < 1.0:
            errors.append(("dataset.eval_fraction", "must lie in (0, 1)"))

    if isinstance(optimizer, Sequential) and M not in (None, 1):
        errors.append(("cluster.workers", "the sequential optimizer needs exactly 1 worker"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        model=spec, optimizer=optimizer, schedule=schedule, M=M, delay=delay,
        server_overhead=so, dc_overhead=dco, minibatch=minibatch, epochs=epochs,
        eval_every=eval_every, checkpoint_every=ckpt, init_scale=init_scale, dataset=ds,
        seed=get("seed", _int, 0), output_dir=get("output_dir", str, base.output_dir),
    )


def parse_config(text, overrides=()):
    """Parse config text; ``overrides`` are extra ``key=value`` strings."""
    pairs = parse_pairs(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError([(item, "override must look like key=value")])
        k, v = (s.strip() for s in item.split("=", 1))
        pairs[k] = v
    return from_pairs(pairs)


def load_config(path, overrides=()):
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def validate(cfg):
    """Round-trip through the text form, which runs every field check."""
    return parse_config(format_config(cfg))
