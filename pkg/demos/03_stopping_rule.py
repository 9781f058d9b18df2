# %% [markdown]
# # When to stop sampling
#
# A run ends once every monitored quantity has a Monte Carlo error that is
# small next to its posterior spread. With precision ε and level δ the rule
# needs an effective sample size of 4·z²/ε² draws, where z is the upper δ/2
# normal quantile.

# %%
import numpy as np
from scipy.signal import lfilter

from lmmselect import FwsrConfig, ess, ess_target, fwsr_pass, mcse

for eps in (0.25, 0.124, 0.05):
    print(f"epsilon {eps:<6} delta 0.05 -> ESS target {ess_target(FwsrConfig(eps, 0.05)):8.1f}")

# %% [markdown]
# Batch means on autocorrelated chains. For an AR(1) process with
# coefficient ρ the true ratio ESS/n is (1 − ρ)/(1 + ρ).

# %%
rng = np.random.default_rng(0)
n = 100_000
for rho in (0.0, 0.5, 0.9, 0.99):
    e = rng.standard_normal(n)
    e[0] /= np.sqrt(1 - rho**2)
    x = lfilter([1.0], [1.0, -rho], e)
    print(f"rho {rho:<5} ESS/n {ess(x) / n:.4f}  exact {(1 - rho) / (1 + rho):.4f}  MCSE {mcse(x):.4f}")

# %% [markdown]
# The rule applied to growing prefixes of a sticky chain: it flips to "pass"
# about where the ESS crosses the target.

# %%
cfg = FwsrConfig()
e = rng.standard_normal(60_000)
x = lfilter([1.0], [1.0, -0.95], e)
for m in (2_000, 10_000, 30_000, 40_000, 50_000, 60_000):
    print(f"first {m:>6} draws: ESS {ess(x[:m]):7.1f}  pass {fwsr_pass(x, cfg, n=m)}")
