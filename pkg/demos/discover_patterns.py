"""
Discovering recurring patterns in 100 days
==========================================

Four daily routines are sampled 25 times each in shuffled order. Every day
is fitted independently. The sequential scan then groups days whose
densities are close, and the result is scored against the known routines.
"""

from mobility_miner import (GeneratorConfig, McConfig, Thresholds, commuter_templates,
                            discover, generate, score_recovery, summarize,
                            varying_length_experiment)
from mobility_miner.experiments import fit_catalog

dataset, truth = generate(GeneratorConfig(commuter_templates(), seed=0))
catalog, _ = fit_catalog(dataset, seed=0)
print(f"fitted {len(catalog)} days, skipped {len(catalog.skipped)}")

###############################################################################
# Discovery with the default thresholds.

patterns = discover(catalog, Thresholds(5, 100), McConfig(10_000, seed=0))
for p in patterns.patterns:
    routines = sorted({truth[d] for d in p.member_day_ids})
    print(f"pattern {p.pattern_id}: {len(p.member_day_ids)} days, "
          f"representative {p.representative_day_id}, routines {routines}")

score = score_recovery(patterns, truth)
summary = summarize(patterns)
print(f"Rand index {score.rand_index:.3f}; singleton fraction {summary.singleton_fraction}")

###############################################################################
# How many days are needed? Short windows miss routines that did not occur
# in them; the count saturates once every routine has appeared.

for pt in varying_length_experiment(catalog, [5, 10, 25, 50, 100], repeats=5, seed=0):
    print(f"{pt.length:>4} days: {pt.mean:.1f} +/- {pt.std:.1f} patterns")
