# %% [markdown]
# # Property checks
#
# `verify_suite` bundles the numerical checks behind the acceptance tests:
# Taylor order of the compensated gradient, the lambda-MSE condition,
# adaptive lambda, persistence and more. The quick suite skips the
# multi-seed training comparison.

# %%
from dcasgd.verify import verify_suite

for result in verify_suite(quick=True):
    print(result.line())
