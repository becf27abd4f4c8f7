# %% [markdown]
# # Reading the event trace
#
# Each run writes `trace.log`, one line per pull, gradient and flush.
# With heterogeneous fixed compute times the fast worker sends more
# updates and the slow worker's gradients are staler.

# %%
import os
import tempfile

from dcasgd import harness
from dcasgd.config import DatasetConfig, FixedComputeTime
from dcasgd.model import ModelSpec
from dcasgd.sim import read_trace, staleness_stats

out = tempfile.mkdtemp(prefix="dcasgd-trace-")
cfg = harness.default_config(
    model=ModelSpec.softmax(5, 3), dataset=DatasetConfig(S=2000, eval_size=200),
    M=3, delay=FixedComputeTime((1.0, 2.0, 4.0)), epochs=2, output_dir=out)
harness.run(cfg)
rows = read_trace(os.path.join(out, "trace.log"))

# %%
for m in range(3):
    mine = [r for r in rows if r[1] == "grad" and r[2] == m]
    st = staleness_stats(mine)
    print(f"worker {m}: {st['count']} gradients, mean staleness {st['mean']:.2f}, max {st['max']}")

# %% [markdown]
# The same summary is available from the command line:
#
#     dcasgd inspect-trace <dir>/trace.log --warmup 3
