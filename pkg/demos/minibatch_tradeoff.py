"""How iteration and total complexity of tau-nice SAGA move with tau.

    python demos/minibatch_tradeoff.py [n] [lambda]
"""

import sys

from jacsketch.data_io import synthesize_ridge
from jacsketch.problem import FiniteSumProblem, smoothness_profile
from jacsketch.theory import tau_tradeoff_curve

n = int(sys.argv[1]) if len(sys.argv) > 1 else 16
ds, _ = synthesize_ridge(n, n, seed=1)
base = FiniteSumProblem(ds.features, ds.labels, 0.0)
lam = float(sys.argv[2]) if len(sys.argv) > 2 else smoothness_profile(base).max_L / n
problem = FiniteSumProblem(ds.features, ds.labels, lam)

curve = tau_tradeoff_curve(problem)
print(f"{'tau':>4s} {'iterations':>12s} {'total':>12s} {'hofmann':>12s}")
for row in curve.rows():
    print(f"{row['tau']:4d} {row['iteration_complexity']:12.1f} {row['total_complexity']:12.1f} {row['hofmann']:12.1f}")
print(f"best tau for total work: {curve.best_tau}")
