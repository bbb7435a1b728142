"""
Noise kernels, time weightings and the importance distribution
==============================================================

Run with ``python demos/01_kernels_and_weights.py``.
"""

# %%
import numpy as np

from softtrunc.sde import SdeSpec, kernel_consistency_check
from softtrunc.weighting import ImportanceDist, TruncationPrior, WeightingFn, weight_prior

vp, ve, rve = SdeSpec.vp(), SdeSpec.ve(), SdeSpec.rve()

# %%
# The closed-form kernel variance agrees with a numerical solve of the variance ODE.
for spec in (vp, ve, rve):
    print(spec.kind, "kernel error", kernel_consistency_check(spec, np.linspace(0.01, 1, 100)))

# %%
# The importance density g^2 / sigma^2 piles up near eps: a quarter of its mass lies
# below a few thousandths of the horizon.
d = ImportanceDist(vp, vp.eps)
print("VP importance quartiles", d.ppf([0.25, 0.5, 0.75]))
print("CDF at 5e-3 and 0.106:", d.cdf([5e-3, 0.106]))

# %%
# A truncation prior P_k(tau) ~ tau^-k; k = 1 puts half its mass below sqrt(eps).
p = TruncationPrior(1.0, vp.eps)
print("k=1 prior median", p.ppf(0.5), "sqrt(eps)", np.sqrt(vp.eps))

# %%
# Each weighting with nondecreasing lambda / g^2 induces a prior (an atom at eps plus
# a density). Under VE the sigma^2 weighting does, under VP it does not.
pw = weight_prior(WeightingFn("variance"), ve)
print("VE variance weighting: atom", pw.atom, "Z", pw.Z)
try:
    weight_prior(WeightingFn("variance"), vp)
except ValueError as err:
    print("VP variance weighting:", err)
