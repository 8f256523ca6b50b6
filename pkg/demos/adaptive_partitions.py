"""
Letting the data choose where the coarse scales break.

Fixed dyadic blocks put boundaries in arbitrary places. Here each scale is a
changepoint module with 1, 2 and 4 pieces, so the split locations are
sampled along with the levels. The posterior of the two-piece split is
printed next to the true jump positions of the signal.
"""
from collections import Counter

import numpy as np

from bmms import ModuleSpec, MultiscaleDesign, SimulationDesign, gen_design, posterior_summaries
from bmms import run_modular_sampler

X, y, beta = gen_design(SimulationDesign(n=80, p=64, rho=0.9, function="blocks", seed=5))
jumps = np.flatnonzero(np.diff(beta)) + 1
print("true jump positions:", jumps.tolist())

specs = [ModuleSpec("changepoint", j + 1, n_pieces=k) for j, k in enumerate([1, 2, 4])]
chain = run_modular_sampler(MultiscaleDesign(X), y, specs, T=3000, burn_in=500, seed=5)

split = Counter(chain.partitions[1][:, 0].tolist())
print("two-piece split, top 5:", [(s, round(c / chain.n_draws, 3)) for s, c in split.most_common(5)])
four = Counter(map(tuple, chain.partitions[2].tolist()))
print("four-piece splits, modal:", four.most_common(1)[0][0])

summ = posterior_summaries(chain)
for j in range(3):
    print(f"up to scale {j + 1}: coefficient MSE {np.mean((summ.total_mean[j] - beta) ** 2):.4f}")
