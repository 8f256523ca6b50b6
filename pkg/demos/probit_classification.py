"""
Binary outcomes through a probit link.

Latent utilities are drawn from truncated normals given the current linear
predictor, and the multiscale modules are then fitted to those utilities
with unit noise. Accuracy and AUC are reported on held-out data.
"""
import numpy as np

from bmms import (
    ModuleSpec,
    MultiscaleDesign,
    SimulationDesign,
    auc_score,
    gen_design,
    gen_out_of_sample,
    posterior_summaries,
    run_probit_sampler,
)
from scipy.stats import norm

design = SimulationDesign(n=200, p=32, rho=0.9, function="heavisine", seed=11, link="probit")
rng = np.random.default_rng(11)
X, y, beta = gen_design(design, rng)
X_out, y_out = gen_out_of_sample(design, beta, 500, rng)
print(f"{int(y.sum())} of {y.size} training labels are 1")

md = MultiscaleDesign.from_sizes(X, [4, 32])
specs = [ModuleSpec("conjugate", 1), ModuleSpec("conjugate", 2)]
chain = run_probit_sampler(md, y, specs, T=3000, burn_in=500, seed=11)
bhat = posterior_summaries(chain, md).total_mean[-1]

eta = X_out @ bhat
prob = norm.cdf(eta)
print(f"held-out accuracy {np.mean((prob > 0.5) == (y_out == 1)):.3f}")
print(f"held-out AUC      {auc_score(y_out, eta):.3f}")
print(f"AUC of the true coefficients {auc_score(y_out, X_out @ beta):.3f}")
