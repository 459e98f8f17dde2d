"""Splitting the spectrum into slices of equal eigenvalue count.

Compares the uniform split, the tree (bisection) baseline and the refined
plan, and reports how many sequential counting rounds each one cost.
"""

from fracspec import (
    BasisSpec, RefinementParams, assemble, build_mesh, estimate_spectral_radius, partition,
    partition_tree,
)

ap = assemble(build_mesh(2, 8), BasisSpec(3))
bounds = estimate_spectral_radius(ap.pencil)
print(f"N = {ap.n}, spectrum inside [{bounds.lo:.1f}, {bounds.hi:.1f}]")

P = 8
plan = partition(ap.pencil, P, RefinementParams(), bounds=bounds)
print(f"\nrefined plan for P = {P} (ideal load {plan.ideal_load:.1f})")
for stage, mx, mn, ideal, rounds in plan.history:
    print(f"  {stage:8s} max {mx:4d}  min {mn:4d}  rounds {rounds}")
for (lo, hi), c in zip(plan.intervals, plan.counts):
    print(f"  [{lo:10.2f}, {hi:10.2f})  {c}")

# the tree baseline is exact but pays n_c rounds per level
for P in (2, 4, 8, 16):
    tree = partition_tree(ap.pencil, bounds, P)
    greedy = partition(ap.pencil, P, bounds=bounds)
    print(f"P = {P:2d}: tree {tree.rounds:3d} rounds (max {tree.max_load}), "
          f"greedy {greedy.rounds:3d} rounds (max {greedy.max_load})")
