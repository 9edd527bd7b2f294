"""
Depth, width and the advantage of debate
========================================

Walk through the closed-form model: per-step success, single- and
multi-agent success, the relative gain, and how it grows with depth but
saturates with width.  Then check one point against the Monte Carlo
simulator.

Run with ``python3 demos/closed_forms.py``.
"""

from dwlab import simkit, theory
from dwlab.theory import ModelParams

# A task with d sequential steps, each needing w capabilities that each
# succeed with probability q.  N agents debate; a summarizer recovers a
# correct step with probability r.
base = ModelParams(q=0.9, w=2, d=3, n_agents=3, r=0.95)

s = theory.per_step_success(base.q, base.w)
print(f"per-step success s = q^w = {s:.4f}")
print(f"single agent  : {theory.single_success(base):.4f}")
print(f"multi agent   : {theory.multi_success(base):.4f}")
print(f"relative gain : {theory.performance_gain(base).gain:.4f}")

# Gain against depth (rows) and width (columns).
print("\ngain surface, d down / w across")
surf = theory.gain_surface(base, range(1, 6), range(1, 6))
print("     " + "".join(f"w={w:<8d}" for w in range(1, 6)))
for d in range(1, 6):
    print(f"d={d}  " + "".join(f"{surf[d, w]:<10.3f}" for w in range(1, 6)))

# Width saturates: the gain approaches a finite ceiling that depends only
# on d, N and r.  Depth has no ceiling.
print("\nwidth ceiling at d=2, N=3, r=1:", theory.width_limit_gain(2, 3, 1.0))
d_star = theory.verify_depth_divergence(ModelParams(q=0.9, w=2, d=1, n_agents=4, r=0.99), 1e6)
print("depth at which the gain first exceeds 1e6 (q=.9, w=2, N=4, r=.99):", d_star)

# The step-wise aggregation variant (summarizer applied per step rather
# than once per task) has the f^d - 1 gain shape.
step = base.with_(aggregation="step")
print(f"\nstep-wise aggregation gain at the same point: {theory.performance_gain(step).gain:.4f}")

# Monte Carlo: simulate the stochastic model and compare with the closed forms.
rep = simkit.compare_to_closed_form(simkit.TrialConfig(base, trials=200_000, seed=1))
print(f"\nsimulated single {rep.single_hat:.4f} vs {rep.single_expected:.4f}")
print(f"simulated multi  {rep.multi_hat:.4f} vs {rep.multi_expected:.4f}")
print("within the confidence interval:", rep.passed)
