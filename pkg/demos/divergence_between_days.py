"""
Asymmetric divergence between days
==================================

KL divergence is not symmetric, and the asymmetry is informative. If day q
visits everything day p visits and more, D(p||q) stays small while
D(q||p) grows with the unvisited mass.
"""

import numpy as np

from mobility_miner import McConfig, MixtureDensity, Thresholds, kl_pair


def places(weights, centres, spread=1.0):
    w = np.asarray(weights, float)
    return MixtureDensity.from_arrays(w / w.sum(), np.asarray(centres, float),
                                      np.array([np.eye(2) / spread**2] * len(w)))


full = places([.5, .3, .2], [(0, 0), (10, 0), (5, 6.5)])
days = {
    "two of its three places": places([.6, .4], [(0, 0), (10, 0)]),
    "slightly shifted copy": places([.45, .33, .22], [(0.3, 0.2), (10.2, -0.3), (4.8, 6.7)]),
    "mostly somewhere else": places([.1, .9], [(0, 0), (30, 30)]),
}

###############################################################################
# Each pair carries a Monte-Carlo standard error. The default thresholds
# (5, 100) ask for one small direction and no huge one.

th = Thresholds(5, 100)
for name, day in days.items():
    pair = kl_pair(full, day, McConfig(n=20_000, seed=0))
    fwd, rev = pair.values()
    print(f"{name:>24}: D(full||day) = {fwd:8.2f} +/- {pair.forward.std_error:.2f}, "
          f"D(day||full) = {rev:8.2f} +/- {pair.reverse.std_error:.2f}, "
          f"same pattern: {th.accepts(pair)}")
