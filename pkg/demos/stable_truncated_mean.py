"""
Truncated Gaussian far in the tail
==================================

A Gaussian centred at -100 with sigma 0.1, truncated to x >= 0, puts all of
its mass just above zero.  The textbook formula divides two numbers that
both underflow to zero.
"""

import numpy as np
from scipy import stats

from tgplan import TruncatedGaussian

mu, sigma, lower = -100.0, 0.1, 0.0
alpha = (lower - mu) / sigma

# the naive closed form: phi(alpha) / (1 - Phi(alpha))
with np.errstate(all="ignore"):
    naive = mu + sigma * stats.norm.pdf(alpha) / stats.norm.sf(alpha)
print("naive mean :", naive)

d = TruncatedGaussian.create(mu, sigma, lower=lower)
print("stable mean:", d.mean())
print("log Z      :", d.log_partition())
print("log p(1e-4):", d.log_prob(1e-4))

# the mean moves smoothly as the centre walks into the tail
for m in (-1.0, -10.0, -100.0, -1000.0):
    print(f"mu={m:8.1f}  mean={TruncatedGaussian.create(m, sigma, lower=0.0).mean():.6e}")
