"""A tour of rotary time encoding with real calendar dates.

Walks through the three facts the attention mechanism leans on: rotation
preserves vector length, a shared acquisition day cancels out of every
logit, and logits depend only on day offsets, so a model trained on 2018
imagery scores 2023 pairs with the same geometry.
"""

import numpy as np

from tempofuse import rope

rng = np.random.default_rng(0)
sched = rope.frequencies(d=16)

q = rng.standard_normal(16)
k = rng.standard_normal(16)

print("== day counts from dates ==")
for ymd in ((2018, 3, 14), (2018, 6, 12), (2023, 3, 14)):
    print(f"  {ymd[0]}-{ymd[1]:02d}-{ymd[2]:02d} -> day {rope.date_to_days(*ymd)}")

m = rope.date_to_days(2018, 3, 14)
n = rope.date_to_days(2018, 6, 12)

print("\n== rotation preserves length ==")
print(f"  |q|          = {np.linalg.norm(q):.12f}")
print(f"  |rotate(q)|  = {np.linalg.norm(rope.rotate(q, m, sched)):.12f}")

print("\n== same day == no rotation in the logit ==")
plain = float(q @ k)
same_day = float(rope.rotate(q, m, sched) @ rope.rotate(k, m, sched))
print(f"  q.k unrotated        = {plain:.12f}")
print(f"  q.k both at day {m} = {same_day:.12f}")

print("\n== only the offset matters ==")
base = float(rope.rotate(q, m, sched) @ rope.rotate(k, n, sched))
print(f"  spring/summer 2018 logit: {base:.12f}")
for years in (1, 5, 20):
    delta = 365 * years
    moved = float(rope.rotate(q, m + delta, sched)
                  @ rope.rotate(k, n + delta, sched))
    print(f"  both moved {years:2d} years on: {moved:.12f} "
          f"(diff {abs(moved - base):.2e})")
print(f"  relative_property_check: "
      f"{rope.relative_property_check(q, k, m, n, 3650, sched)}")

print("\n== different offsets, different logits ==")
for gap in (0, 30, 90, 180, 365):
    v = float(rope.rotate(q, m, sched) @ rope.rotate(k, m + gap, sched))
    print(f"  gap {gap:4d} days -> logit {v:+.6f}")
