# %% [markdown]
# # Sweeping the compensation strength
#
# lambda = 0 is plain ASGD. Moderate values correct the delay, and very
# large ones overshoot.

# %%
from dcasgd import harness
from dcasgd.config import DatasetConfig
from dcasgd.model import ModelSpec
from dcasgd.optim import DcAsgdConst, LrSchedule

base = harness.default_config(
    model=ModelSpec.softmax(10, 5), dataset=DatasetConfig(S=5000, eval_size=2000),
    optimizer=DcAsgdConst(0.0), M=16, epochs=4, schedule=LrSchedule(1.0, (3,), 10.0))
_, summary, _ = harness.lambda_sweep(base, [0.0, 1.0, 4.0, 16.0, 256.0])
for lam, risk, err, diverged in summary:
    print(f"lambda {lam:7.1f}  train risk {risk:.5f}  eval error {err:.4f}  diverged {bool(diverged)}")
