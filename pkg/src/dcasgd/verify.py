"""Property checks with measured margins.

Each ``check_*`` function returns a list of :class:`CheckResult`.  A
positive margin means the property held with room to spare; the unit
depends on the check and is described in ``detail``.
"""

import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import hessian as hx
from . import model
from .config import DatasetConfig, ExperimentConfig, RoundRobin, StochasticCompute
from .data import generate_synthetic
from .dcssgd import Ordering, dc_ssgd_step, plain_step, unfold_vs_sequential
from .harness import dcssgd_comparison, run, simulate
from .optim import (
    DEFAULT_EPS, Asgd, DcAsgdAdaptive, DcAsgdConst, LambdaControllerState, LrSchedule, Sequential,
    adaptive_lambda,
)
from .seeding import PLANTED, PROBES, substream
from .sim import staleness_stats


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def line(self):
        return f"{self.name}\t{'PASS' if self.passed else 'FAIL'}\t{self.margin:.6g}\t{self.detail}"


# 1. degeneracy

def _trajectory(cfg):
    res = simulate(cfg, record_trajectory=True)
    return np.array(res.trajectory)


def check_degeneracy(updates=1000):
    spec = model.ModelSpec.softmax(5, 3)
    base = ExperimentConfig(
        model=spec, schedule=LrSchedule(0.3), minibatch=8, init_scale=0.1, eval_every=1000.0,
        epochs=math.ceil(updates * 8 / 400) + 1, dataset=DatasetConfig(S=400, eval_size=50), seed=11)
    seq = _trajectory(replace(base, optimizer=Sequential(), M=1))[:updates]
    pairs = [
        ("asgd M=1 == sequential", replace(base, optimizer=Asgd(), M=1), seq),
        ("dc-asgd-c M=1 == sequential", replace(base, optimizer=DcAsgdConst(0.7), M=1), seq),
        ("dc-asgd-a M=1 == sequential", replace(base, optimizer=DcAsgdAdaptive(2.0), M=1), seq),
    ]
    asgd8 = _trajectory(replace(base, optimizer=Asgd(), M=8))[:updates]
    pairs += [
        ("dc-asgd-c lambda=0 M=8 == asgd", replace(base, optimizer=DcAsgdConst(0.0), M=8), asgd8),
        ("dc-asgd-a lambda0=0 M=8 == asgd", replace(base, optimizer=DcAsgdAdaptive(0.0), M=8), asgd8),
    ]
    out = []
    for name, cfg, ref in pairs:
        traj = _trajectory(cfg)[:updates]
        ok = traj.shape == ref.shape and len(ref) == updates and np.array_equal(traj, ref)
        diff = float(np.max(np.abs(traj - ref))) if traj.shape == ref.shape else math.inf
        out.append(CheckResult(f"degeneracy: {name}", ok, -diff, f"{len(traj)} updates, max |diff| {diff:g}"))
    return out


# 2. Taylor order

def trained_softmax(d, K, S, seed, feature_scale=1.0):
    spec = model.ModelSpec.softmax(d, K)
    w_star = substream(seed, PLANTED).normal(size=spec.n)
    train = generate_synthetic(d, K, S, w_star, feature_scale, seed, spec)
    return spec, train, model.fit_newton(train.X, train.y, spec)


def taylor_errors(probes=500, radii=(1e-2, 5e-3), seed=0, neighborhood=0.1):
    """Mean errors of the compensated and delayed gradients at each radius.

    Every probe draws a training sample, a point ``w_t`` near the fitted
    minimizer and a unit direction ``u``; ``dw = r u`` for each radius.
    """
    spec, train, w_hat = trained_softmax(10, 5, 2000, seed)
    rng = substream(seed, PROBES)
    comp = np.zeros((probes, len(radii)))
    plain = np.zeros_like(comp)
    for p in range(probes):
        s = train.sample(int(rng.integers(train.S)))
        w_t = w_hat + rng.normal(size=spec.n) * neighborhood / math.sqrt(spec.n)
        u = rng.normal(size=spec.n)
        u /= np.linalg.norm(u)
        g = model.gradient(s, w_t, spec)
        H = model.hessian(s, w_t, spec)
        for i, r in enumerate(radii):
            target = model.gradient(s, w_t + r * u, spec)
            comp[p, i] = np.linalg.norm(g + H @ (r * u) - target)
            plain[p, i] = np.linalg.norm(g - target)
    return comp.mean(axis=0), plain.mean(axis=0)


def check_taylor_order(probes=500):
    comp, plain = taylor_errors(probes)
    fc, fp = comp[0] / comp[1], plain[0] / plain[1]
    return [
        CheckResult("taylor: compensated error factor in [3.5, 4.5]", 3.5 <= fc <= 4.5,
                    min(fc - 3.5, 4.5 - fc), f"factor {fc:.4f} over {probes} probes"),
        CheckResult("taylor: uncompensated error factor in [1.8, 2.2]", 1.8 <= fp <= 2.2,
                    min(fp - 1.8, 2.2 - fp), f"factor {fp:.4f}"),
        CheckResult("taylor: compensated <= delayed", bool(np.all(comp <= plain)),
                    float(np.min(plain - comp)), f"means {comp} vs {plain}"),
    ]


# 3. lambda-scaled outer product theorem

PROBE_POPULATIONS = (
    # (d, K, count, feature_scale, wstar_scale, offset_range)
    (1, 2, 100, 3.0, 2.0, (1e-8, 1e-3)),
    (2, 2, 100, 1.0, 1.0, (1e-4, 1.0)),
    (3, 3, 50, 1.0, 1.0, (1e-4, 1.0)),
)


def theorem_sweep(seed=0, populations=PROBE_POPULATIONS):
    records = []
    for j, (d, K, count, fs, ws, offs) in enumerate(populations):
        spec = model.ModelSpec.softmax(d, K)
        probes = hx.make_probes(spec, count, seed + 1000 * j, fs, ws, offs)
        lams = substream(seed + 1000 * j, PROBES, 1).uniform(0.0, 1.0, size=count)
        records += hx.sweep(probes, lams, spec)
    return records


def random_corollary_cases(count=200, seed=0):
    """Synthetic constants and probability vectors for the region check."""
    rng = substream(seed, PROBES, 2)
    cases = []
    for _ in range(count):
        K = int(rng.integers(2, 6))
        n = int(rng.integers(1, 5))
        lower = rng.uniform(0.05, 1.0, size=n)
        upper = lower * rng.uniform(1.0, 1.5, size=n)
        alpha = rng.uniform(0.7, 1.0)
        beta = rng.uniform(1.0, 1.3)
        lips = hx.LipschitzEstimates(float(rng.uniform(0.1, 2.0)), lower, upper, alpha, beta)
        top = 1.0 - 10.0 ** rng.uniform(-6, -0.5)
        rest = rng.dirichlet(np.ones(K - 1)) * (1.0 - top)
        sigma = np.concatenate([[top], rest])
        eps = float(10.0 ** rng.uniform(-8, 0))
        cases.append((sigma, float(rng.uniform(0, 1)), lips, eps))
    return cases


def check_lambda_mse_theorem(seed=0, tol=1e-12):
    recs = theorem_sweep(seed)
    cond = [r for r in recs if r.condition_held]
    bad_mse = [r for r in cond if r.mse_lambda_g > r.mse_g + tol]
    cor = [r for r in recs if r.corollary_held]
    bad_cor = [r for r in cor if not r.condition_held]
    cases = random_corollary_cases(seed=seed)
    in_region = [c for c in cases if hx.in_corollary_region(*c)]
    bad_syn = [c for c in in_region if not hx.sufficient_condition(*c)]
    worst = max([r.mse_lambda_g - r.mse_g for r in cond], default=-math.inf)
    return [
        CheckResult("lambda-MSE: condition => mse(lambda G) <= mse(G)", not bad_mse, -len(bad_mse),
                    f"{len(recs)} probes, condition held on {len(cond)}, counterexamples {len(bad_mse)}, "
                    f"largest mse gain {worst:.3g}"),
        CheckResult("lambda-MSE: corollary region => condition", not bad_cor, -len(bad_cor),
                    f"corollary held on {len(cor)} probes, counterexamples {len(bad_cor)}"),
        CheckResult("lambda-MSE: corollary => condition (synthetic constants)", not bad_syn, -len(bad_syn),
                    f"{len(cases)} cases, {len(in_region)} in region, counterexamples {len(bad_syn)}"),
        CheckResult("lambda-MSE: sweep is not vacuous", len(cond) >= 10 and len(cor) >= 5,
                    min(len(cond) - 10, len(cor) - 5), f"condition {len(cond)}, corollary {len(cor)}"),
    ]


# 4. Fisher identity

def check_fisher_identity(instances=50, seed=0, path_scale=1e-2):
    # eps_t is only locally monotone: its first-order term can vanish (K=2
    # with sigma near 1/2), so paths start within path_scale of w*
    rng = substream(seed, PROBES, 3)
    at_star, mono_fail, worst_ratio = 0.0, 0, 0.0
    for _ in range(instances):
        d, K = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        spec = model.ModelSpec.softmax(d, K)
        x = rng.normal(size=d)
        w_star = rng.normal(size=spec.n)
        at_star = max(at_star, hx.epsilon_t(x, w_star, w_star, spec))
        delta = rng.normal(size=spec.n) * path_scale
        path = [hx.epsilon_t(x, w_star + 0.5 ** k * delta, w_star, spec) for k in range(5)]
        steps = np.diff(path)
        mono_fail += int(np.any(steps >= 0))
        worst_ratio = max(worst_ratio, max(path[k + 1] / path[k] for k in range(4)))
    return [
        CheckResult("fisher: eps_t(w*) <= 1e-10", at_star <= 1e-10, 1e-10 - at_star,
                    f"max over {instances} instances {at_star:.3g}"),
        CheckResult("fisher: eps_t decreases along paths to w*", mono_fail == 0, -mono_fail,
                    f"non-monotone paths {mono_fail}, largest step ratio {worst_ratio:.3f}"),
    ]


# 5. diagonal bound

def check_diag_bound(probes=100, seed=0):
    spec = model.ModelSpec.softmax(3, 3)
    pr = hx.make_probes(spec, probes, seed + 7, 1.0, 1.0, (1e-3, 1.0))
    lams = substream(seed, PROBES, 4).uniform(0, 1, size=probes)
    viol, slack = 0, math.inf
    for p, lam in zip(pr, lams):
        r = hx.probe_record(0, p, lam, spec)
        bound = hx.diag_mse_bound(lam, r.extra["v1"], r.extra["l1"], r.eps_t, r.eps_d)
        viol += int(r.mse_diag > bound)
        slack = min(slack, bound - r.mse_diag)
    return [CheckResult("diag bound: mse(Diag(lambda G)) <= bound", viol == 0, slack,
                        f"{probes} probes, violations {viol}")]


# 6. convergence ordering

ORDERING_ETAS = (0.4, 0.57, 0.8, 1.13, 1.6, 2.26, 3.2, 4.5)
ORDERING_LAMBDA_C = (4.0, 16.0, 32.0, 64.0)
ORDERING_LAMBDA_A = (0.25, 0.5, 1.0, 2.0, 4.0)


def ordering_base():
    return ExperimentConfig(
        model=model.ModelSpec.softmax(20, 10), M=8, delay=RoundRobin(), minibatch=128, epochs=20,
        eval_every=20.0, schedule=LrSchedule(0.5, (10, 15), 10.0),
        dataset=DatasetConfig(S=10000, eval_size=2000, seed=0))


def _final_risk(base, opt, eta, seed):
    M = 1 if isinstance(opt, Sequential) else base.M
    cfg = replace(base, optimizer=opt, M=M, seed=seed, schedule=replace(base.schedule, eta0=eta))
    res = simulate(cfg)
    return math.inf if res.diverged else res.metrics[-1].train_risk


def convergence_ordering(tune_seeds=(900, 901, 902, 903, 904), eval_seeds=tuple(range(10)),
                         etas=ORDERING_ETAS, lams_c=ORDERING_LAMBDA_C, lams_a=ORDERING_LAMBDA_A):
    """Tune (eta, lambda0) per method on ``tune_seeds``, then evaluate.

    Returns ``(tuned, finals)``: the chosen settings and the final training
    risks on ``eval_seeds``, one array per method.
    """
    base = ordering_base()
    families = {
        "sequential": [Sequential()],
        "asgd": [Asgd()],
        "dc-asgd-c": [DcAsgdConst(l) for l in lams_c],
        "dc-asgd-a": [DcAsgdAdaptive(l) for l in lams_a],
    }
    tuned, finals = {}, {}
    for name, opts in families.items():
        scores = [(np.mean([_final_risk(base, o, e, s) for s in tune_seeds]), e, o) for o in opts for e in etas]
        score, eta, opt = min(scores, key=lambda c: c[0])
        tuned[name] = (eta, opt)
        finals[name] = np.array([_final_risk(base, opt, eta, s) for s in eval_seeds])
    return tuned, finals


def paired(finals, a, b):
    d = finals[a] - finals[b]
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(len(d)))


def unpaired_se(finals, a, b):
    n = len(finals[a])
    return float(math.sqrt((finals[a].var(ddof=1) + finals[b].var(ddof=1)) / n))


def check_convergence_ordering(**kw):
    tuned, finals = convergence_ordering(**kw)
    out = []
    for dc in ("dc-asgd-c", "dc-asgd-a"):
        diff, se = paired(finals, dc, "asgd")
        out.append(CheckResult(f"ordering: {dc} below asgd by more than one SE", -diff > se, -diff - se,
                               f"mean diff {diff:+.3g}, paired SE {se:.3g}, unpaired SE {unpaired_se(finals, dc, 'asgd'):.3g}, "
                               f"tuned {tuned[dc]}"))
    diff, se = paired(finals, "dc-asgd-a", "sequential")
    out.append(CheckResult("ordering: |dc-asgd-a - sequential| <= 2 SE", abs(diff) <= 2 * se, 2 * se - abs(diff),
                           f"mean diff {diff:+.3g}, paired SE {se:.3g}, "
                           f"unpaired SE {unpaired_se(finals, 'dc-asgd-a', 'sequential'):.3g}, means " + ", ".join(f"{k} {v.mean():.6f}" for k, v in finals.items())))
    return out


# 7. staleness

def check_staleness(M=8, updates=10000):
    spec = model.ModelSpec.softmax(5, 3)
    base = ExperimentConfig(model=spec, optimizer=Asgd(), M=M, minibatch=1, epochs=1, eval_every=1.0,
                            dataset=DatasetConfig(S=updates, eval_size=10), schedule=LrSchedule(0.01))
    rr = staleness_stats(simulate(replace(base, delay=RoundRobin())).trace, warmup=M)
    st = staleness_stats(simulate(replace(base, delay=StochasticCompute((1.0,) * M))).trace)
    exact = rr["histogram"] == {M - 1: rr["count"]}
    rel = abs(st["mean"] - (M - 1)) / (M - 1)
    return [
        CheckResult("staleness: round-robin tau == M-1 after warmup", exact, 0.0 if exact else -1.0,
                    f"histogram {rr['histogram']}"),
        CheckResult("staleness: stochastic mean tau within 10% of M-1", rel <= 0.1, 0.1 - rel,
                    f"mean {st['mean']:.4f} over {st['count']} updates"),
    ]


# 8. DC-SSGD

def check_dcssgd(trials=200, seed=0):
    rng = substream(seed, PROBES, 5)
    worst0 = 0.0
    for _ in range(50):
        n, M = int(rng.integers(1, 8)), int(rng.integers(1, 9))
        w = rng.normal(size=n)
        grads = [rng.normal(size=n) for _ in range(M)]
        eta = float(rng.uniform(0.01, 1))
        for order in Ordering:
            worst0 = max(worst0, float(np.max(np.abs(dc_ssgd_step(w, grads, eta, 0.0, order) - plain_step(w, grads, eta)))))
    worstq = 0.0
    for _ in range(20):
        n, M = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        As, bs = [], []
        for _ in range(M):
            Q = rng.normal(size=(n, n))
            As.append(Q @ Q.T / n + np.eye(n) * 0.1)
            bs.append(rng.normal(size=n))
        gfs = [lambda w, A=A, b=b: A @ w - b for A, b in zip(As, bs)]
        hfs = [lambda w, A=A: A for A in As]
        d_dc, _ = unfold_vs_sequential(rng.normal(size=n), gfs, 0.05, 0.0, Ordering.AS_GIVEN, hfs)
        worstq = max(worstq, d_dc)
    cfg = ExperimentConfig(model=model.ModelSpec.softmax(10, 5), dataset=DatasetConfig(S=5000, eval_size=10), seed=seed)
    rows = dcssgd_comparison(cfg, trials=trials, M=8, eta=0.05, lam=1.0, batch=16)
    dc = float(np.mean([r["dist_dc"] for r in rows]))
    pl = float(np.mean([r["dist_plain"] for r in rows]))
    return [
        CheckResult("dc-ssgd: lambda=0 equals plain step", worst0 <= 1e-12, 1e-12 - worst0, f"max |diff| {worst0:.3g}"),
        CheckResult("dc-ssgd: exact-Hessian tier on quadratics matches sequential", worstq <= 1e-10,
                    1e-10 - worstq, f"max distance {worstq:.3g}"),
        CheckResult("dc-ssgd: diagonal compensation closer to sequential than plain", dc < pl, pl - dc,
                    f"{trials} trials, mean distance dc {dc:.6g} vs plain {pl:.6g}"),
    ]


# 9. adaptive lambda

def hand_adaptive(g1, g2, lambda0, m, eps=1e-7):
    """Two recursion steps written out with plain Python floats."""
    out = []
    for i in range(len(g1)):
        ms1 = m * 0.0 + (1.0 - m) * (g1[i] * g1[i])
        ms2 = m * ms1 + (1.0 - m) * (g2[i] * g2[i])
        out.append((ms1, ms2, lambda0 / math.sqrt(ms1 + eps), lambda0 / math.sqrt(ms2 + eps)))
    return out


def check_adaptive_lambda():
    g1, g2, lam0 = [1.0, -2.0, 0.0], [3.0, 0.5, 0.25], 2.0
    out = []
    for m in (0.0, 0.95):
        st = LambdaControllerState.zeros(3)
        st1, l1 = adaptive_lambda(st, np.array(g1), lam0, m)
        st2, l2 = adaptive_lambda(st1, np.array(g2), lam0, m)
        ref = hand_adaptive(g1, g2, lam0, m)
        got = [(st1.mean_square[i], st2.mean_square[i], l1[i], l2[i]) for i in range(3)]
        ok = all(a == b for r, gg in zip(ref, got) for a, b in zip(r, gg))
        out.append(CheckResult(f"adaptive lambda: two steps match hand values (m={m})", ok, 0.0 if ok else -1.0,
                               f"lambda after two steps {[float(v) for v in l2]}"))
    ok = DEFAULT_EPS == 1e-7 and DcAsgdAdaptive(1.0).eps == 1e-7
    out.append(CheckResult("adaptive lambda: eps defaults to 1e-7", ok, 0.0 if ok else -1.0, f"eps {DEFAULT_EPS}"))
    return out


# 10. determinism and persistence

def check_persistence(workdir=None):
    own = workdir is None
    tmp = tempfile.TemporaryDirectory() if own else None
    root = tmp.name if own else workdir
    try:
        cfg = ExperimentConfig(
            model=model.ModelSpec.softmax(5, 3), optimizer=DcAsgdAdaptive(2.0), M=4,
            delay=StochasticCompute((1.0, 2.0, 3.0, 4.0)), minibatch=16, epochs=4, eval_every=0.5,
            checkpoint_every=1.0, init_scale=0.1, dataset=DatasetConfig(S=500, eval_size=100), seed=5)
        dirs = [os.path.join(root, k) for k in ("a", "b", "c")]
        run(replace(cfg, output_dir=dirs[0]))
        run(replace(cfg, output_dir=dirs[1]))
        c = replace(cfg, output_dir=dirs[2])
        run(c, stop_after_checkpoints=2)
        run(c, resume_from=os.path.join(dirs[2], "checkpoint-2.bin"))

        def same(f, a, b):
            with open(os.path.join(a, f), "rb") as x, open(os.path.join(b, f), "rb") as y:
                return x.read() == y.read()

        rerun = same("metrics.csv", dirs[0], dirs[1]) and same("trace.log", dirs[0], dirs[1])
        resumed = all(same(f, dirs[0], dirs[2]) for f in ("metrics.csv", "trace.log", "checkpoint.bin"))
    finally:
        if own:
            tmp.cleanup()
    return [
        CheckResult("persistence: rerun is byte-identical", rerun, 0.0 if rerun else -1.0, "metrics.csv, trace.log"),
        CheckResult("persistence: resume is byte-identical", resumed, 0.0 if resumed else -1.0,
                    "metrics.csv, trace.log, checkpoint.bin"),
    ]


# module-level sanity checks

def check_derivatives(seed=0):
    rng = substream(seed, PROBES, 6)
    worst_g, worst_h = 0.0, 0.0
    for spec in (model.ModelSpec.softmax(4, 3), model.ModelSpec.mlp(3, 4, 3)):
        for _ in range(5):
            w = rng.normal(size=spec.n)
            s = model.DatasetSample(rng.normal(size=spec.d), int(rng.integers(spec.K)))
            fd = np.array([(model.loss(s, w + e, spec) - model.loss(s, w - e, spec)) / 2e-6
                           for e in np.eye(spec.n) * 1e-6])
            worst_g = max(worst_g, float(np.max(np.abs(fd - model.gradient(s, w, spec)))))
            worst_h = max(worst_h, float(np.max(np.abs(model.exact_hessian(s, w, spec) - model.hessian(s, w, spec)))))
    return [
        CheckResult("model: gradient matches finite differences", worst_g < 1e-6, 1e-6 - worst_g, f"{worst_g:.3g}"),
        CheckResult("model: Hessian matches finite differences", worst_h < 1e-6, 1e-6 - worst_h, f"{worst_h:.3g}"),
    ]


QUICK = (check_derivatives, check_degeneracy, check_fisher_identity, check_adaptive_lambda, check_staleness,
         check_persistence)
FULL = QUICK + (check_taylor_order, check_lambda_mse_theorem, check_diag_bound, check_dcssgd,
                check_convergence_ordering)


def verify_suite(quick=False):
    results = []
    for fn in QUICK if quick else FULL:
        with np.errstate(all="ignore"):
            results += fn()
    return results
