# %% [markdown]
# # Does the estimator settle down as the sample grows?
#
# We simulate from the default true parameters at increasing design sizes,
# fit each data set from advised starting values and track the squared-error
# statistic of each parameter block. The statistic for the random-effects
# covariance is the sum over its ten unique entries of the squared relative
# error, so 0.2 means a typical entry is off by about 14%.
#
# Set ``REPS`` higher for tighter intervals; 20 replications at the two sizes
# below take a few minutes on one core.

# %%
import os

from mvlmm.benchmark import run_mse

REPS = int(os.environ.get("REPS", 20))
SIZES = [(600, 50), (3000, 100)]

report = run_mse(SIZES, reps=REPS, seed=20160101)
print(report.table())

# %% [markdown]
# Mean and percentile band of the covariance statistic by size:

# %%
for row in report.summary:
    g = row["errors"]["gamma_bar"]
    print(f"{row['size']:>9s}  mean {g['mean']:.3f}  median {g['median']:.3f}  "
          f"95% band {g['p2.5']:.3f} - {g['p97.5']:.3f}")

# %% [markdown]
# The fixed effects converge quickly because their estimates depend on the
# covariance only through the weights. The covariance entries need many groups,
# not just many rows: going from 50 to 100 groups matters more than going from
# 600 to 3000 observations.

# %%
with open("consistency.jsonl", "w") as fh:
    fh.write(report.to_jsonl())
