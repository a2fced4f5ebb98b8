"""
How much data separates the two hypotheses
==========================================

Compute the sample size at which the best test reaches a 10% error, for
increasing depth, and check one size by simulation.
"""

from ope_lab.lower_bound import (DistinguishTask, growth_ratio_sweep, monte_carlo_error_rate,
                                 required_n_for_error)

# Each extra level multiplies the requirement by roughly ((L+1)/L) m gamma^2.
for row in growth_ratio_sweep(gamma=0.9, m=2, q=1.0, eps=0.1, target_error=0.1,
                              L_range=range(2, 7)):
    print(row)

# With q = gamma^2 the informative states never appear in the data.
print("q = gamma^2:", required_n_for_error(DistinguishTask(0.9, 2, 2, q=0.81), 0.1))

# A quick simulation at the size where the exact error is 25%.
task = DistinguishTask(0.9, 2, 2, q=1.0, eps=0.1)
n = required_n_for_error(task, 0.25)
print(monte_carlo_error_rate(task, n, trials=300, seed=3))
