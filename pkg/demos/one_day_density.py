"""
Fitting one day's GPS density
=============================

A synthetic commuter day (home plus office, with some travel in between)
is fitted two ways: EM with a fixed number of components, and the
truncated Dirichlet-process mixture, which decides the count itself.
"""

import numpy as np

from mobility_miner import (GeneratorConfig, TruncationConfig, commuter_templates,
                            extract_mixture, fit_em, fit_variational, generate)

###############################################################################
# One workday, in metres around the home location.

dataset, truth = generate(GeneratorConfig(commuter_templates()[:1], days_per_template=1,
                                          points_per_day=(400, 400), seed=1))
day = dataset.trajectories[0]
print(f"{day.day_id}: {day.point_count} points, template {truth[day.day_id]}")

###############################################################################
# EM needs K up front. Too small merges places, too large splits them.

for K in (1, 2, 4):
    mix, mll = fit_em(day.points, K, seed=0)
    print(f"EM K={K}: mean log-likelihood {mll:.3f}")

###############################################################################
# The DP mixture starts with 20 available components and leaves the unused
# ones with negligible weight.

post = fit_variational(day.points, cfg=TruncationConfig(seed=0))
print(f"DP fit: {post.n_iter} sweeps, converged={post.converged}, ELBO {post.elbo:.1f}")
print("expected weights:", np.round(post.expected_weights()[:6], 3))

mix = extract_mixture(post, weight_floor=0.01)
for w, c in zip(mix.weights, mix.components):
    sd = np.sqrt(np.linalg.eigvalsh(c.covariance))
    print(f"  weight {w:.3f} at ({c.mean[0]:8.1f}, {c.mean[1]:8.1f}) m, "
          f"spread {sd.round(0)} m")
