"""The ten acceptance criteria, at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line (also repeated in
the pytest terminal summary) with the measured values.
"""

import time

import pytest

from dcasgd import verify
from conftest import ACCEPTANCE_LINES


def _report(number, title, results, started):
    ok = all(r.passed for r in results)
    detail = "; ".join(f"{r.name} [{'ok' if r.passed else 'FAILED'}] {r.detail}" for r in results)
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title} ({time.time() - started:.1f}s) :: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    failed = [r for r in results if not r.passed]
    assert not failed, "\n".join(r.line() for r in failed)


def test_criterion_01_degeneracy():
    t = time.time()
    _report(1, "degeneracy equivalences over 1000 updates, tolerance 0", verify.check_degeneracy(1000), t)


def test_criterion_02_taylor_order():
    t = time.time()
    _report(2, "Taylor-order scaling over 500 probes", verify.check_taylor_order(500), t)


def test_criterion_03_lambda_mse_theorem():
    t = time.time()
    res = verify.check_lambda_mse_theorem()
    n = len(verify.theorem_sweep())
    assert n >= 200
    _report(3, f"lambda-MSE sufficient condition, {n} probes", res, t)


def test_criterion_04_fisher_identity():
    t = time.time()
    _report(4, "Fisher identity on 50 instances", verify.check_fisher_identity(50), t)


def test_criterion_05_diag_bound():
    t = time.time()
    _report(5, "diagonal MSE bound on 100 probes", verify.check_diag_bound(100), t)


@pytest.mark.slow
def test_criterion_06_convergence_ordering():
    t = time.time()
    _report(6, "convergence ordering, d=20 K=10 S=1e4 M=8, 20 passes, 10 seeds",
            verify.check_convergence_ordering(), t)


def test_criterion_07_staleness():
    t = time.time()
    _report(7, "staleness model, M=8, 1e4 updates", verify.check_staleness(8, 10000), t)


def test_criterion_08_dcssgd():
    t = time.time()
    _report(8, "DC-SSGD unfolding, 200 trials", verify.check_dcssgd(200), t)


def test_criterion_09_adaptive_lambda():
    t = time.time()
    _report(9, "adaptive lambda recursion", verify.check_adaptive_lambda(), t)


def test_criterion_10_persistence(tmp_path):
    t = time.time()
    _report(10, "rerun and resume byte-equality", verify.check_persistence(str(tmp_path)), t)
