# %% [markdown]
# # Fitting a long-format CSV
#
# A model spec names the grouping column and, per response, the fixed and
# random covariates. ``intercept`` is a keyword rather than a column.

# %%
import tempfile
from pathlib import Path

from mvlmm import advised_init, fit, io
from mvlmm.simulator import default_config, simulate

work = Path(tempfile.mkdtemp())
io.write_csv(work / "growth.csv", simulate(default_config(n_total=800, n_groups=80, seed=3)))

spec = io.parse_spec("""
[model]
group = subject
criterion = reml

[dimension1]
response = weight
fixed = intercept, sex, Nscore, age
random = intercept, Nscore

[dimension2]
response = height
fixed = intercept, sex, Nscore, age
random = intercept, Nscore
""")
data = io.load_csv(work / "growth.csv", spec)
print(f"{data.N} rows in {data.n_groups} groups")

# %%
from mvlmm import FitOptions

res = fit(data, advised_init(data), FitOptions(criterion=spec.criterion))
print("converged:", res.converged, "after", res.iterations, "evaluations")
print("beta1:", res.beta.beta1.round(2))
print("beta2:", res.beta.beta2.round(2))
print("sigma1, sigma2:", round(res.sigma1, 3), round(res.sigma2, 3))
print("random-effects covariance:\n", res.gamma_bar.round(2))

# %% [markdown]
# The same fit from the shell:
#
#     mvlmm simulate --seed 3 --sizes 800x80 --out growth.csv
#     mvlmm fit growth.csv --criterion reml --out fit.json
