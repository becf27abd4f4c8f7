# %% [markdown]
# # Checkpoints and exact resumption
#
# A run with `checkpoint_every` writes `checkpoint-k.bin` files. Resuming
# from any of them reproduces the uninterrupted run byte for byte.

# %%
import filecmp
import os
import tempfile

from dcasgd import harness
from dcasgd.config import DatasetConfig
from dcasgd.model import ModelSpec
from dcasgd.optim import DcAsgdAdaptive

root = tempfile.mkdtemp(prefix="dcasgd-ckpt-")
cfg = harness.default_config(
    model=ModelSpec.softmax(5, 3), dataset=DatasetConfig(S=1000, eval_size=200),
    optimizer=DcAsgdAdaptive(2.0), M=4, epochs=3, checkpoint_every=1.0)

full = cfg.with_(output_dir=os.path.join(root, "full"))
harness.run(full)

part = cfg.with_(output_dir=os.path.join(root, "resumed"))
harness.run(part, stop_after_checkpoints=1)
harness.run(part, resume_from=os.path.join(part.output_dir, "checkpoint-1.bin"))

for name in ("metrics.csv", "trace.log", "checkpoint.bin"):
    same = filecmp.cmp(os.path.join(full.output_dir, name), os.path.join(part.output_dir, name), shallow=False)
    print(f"{name:15s} identical: {same}")
