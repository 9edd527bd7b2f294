"""
Building the two task families
==============================

Math problems are random DAGs with one unknown leaf: depth is the number of
operator levels, width the operator fan-in.  Writing tasks are keyword sets
whose spread across semantic groups is measured by normalized entropy.

Run with ``python3 demos/datasets.py``.
"""

from dwlab import mathgen, writegen

# --- math ------------------------------------------------------------------
p = mathgen.generate_problem(depth=3, width=2, seed=7)
print(p.rendered)
print("ground truth:", p.ground_truth)

# Plugging the ground truth back in reproduces the stated root value.
print("root check:", mathgen.evaluate(p, p.ground_truth) == p.root_value)

# Grading tolerates formatting: fractions, decimals, an ANSWER: line.
print(mathgen.grade(f"I think ANSWER: {p.ground_truth}", p.ground_truth))

cells = mathgen.generate_dataset(count=3, seed=0)
print(f"\n{len(cells)} problems over the 3x3 depth/width grid; first ids:",
      [q.id for q in cells[:3]])

# --- writing ---------------------------------------------------------------
# Entropy is 0 when all keywords share a group, 1 when all groups differ.
for ids in ("aaaa", "aabb", "abcd"):
    print(f"H({ids}) = {writegen.normalized_entropy(list(ids)):.3f}")

tasks = writegen.generate_dataset(Ks=(8,), count=10, seed=0)
for kt in tasks[:3]:
    print(kt.id, f"quintile={kt.quintile}", f"entropy={kt.entropy_norm:.3f}", kt.keyword_texts)

essay = ("The harbor woke slowly. Gulls argued over the nets. A lantern swung in the wind. "
         "Fishermen counted their rope. Children chased the tide. Bread cooled on a sill. "
         "The bell rang twice. Everyone went home.")
score = writegen.score_essay(essay, tasks[0])
print("\nessay that ignores the keywords:", score.to_dict())
