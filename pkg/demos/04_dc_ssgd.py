# %% [markdown]
# # Delay-compensated synchronous rounds
#
# A synchronous round with M workers is like M sequential steps whose
# gradients were all taken at the same point. Unfolding the round and
# compensating each gradient moves the result toward what a sequential
# learner would have reached.

# %%
import numpy as np

from dcasgd import harness
from dcasgd.config import DatasetConfig
from dcasgd.dcssgd import Ordering
from dcasgd.model import ModelSpec

cfg = harness.default_config(model=ModelSpec.softmax(10, 5), dataset=DatasetConfig(S=5000))
for ordering in Ordering:
    rows = harness.dcssgd_comparison(cfg, trials=50, M=8, eta=0.05, lam=1.0, ordering=ordering)
    dc = np.array([r["dist_dc"] for r in rows])
    plain = np.array([r["dist_plain"] for r in rows])
    print(f"{ordering.value:20s} mean distance: compensated {dc.mean():.3e}, plain {plain.mean():.3e}, "
          f"compensated closer in {np.mean(dc < plain):.0%} of trials")
