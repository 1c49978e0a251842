"""What each masking strategy actually asks the model to do.

Samples one plan per strategy on the same four-timestamp scene and prints
which timestamps feed the encoder, which are hidden as prediction targets,
and how the Dirichlet draw spreads the budget across modalities.  Random
structureless masking (RS) lets a frame predict itself from its neighbors;
the timestamp-disjoint strategies force prediction across days.
"""

import numpy as np

from tempofuse import nd
from tempofuse.masking import (Strategy, StrategyConfig, dirichlet_allocate,
                               sample_plan, validate_plan)
from tempofuse.scenes import SceneConfig, generate_scene

scene = generate_scene(3, SceneConfig(H=4, W=4, T=4, patch_px=2))
names = [m.name for m in scene.modalities]
print(f"scene: {scene.H}x{scene.W} cells, T={scene.T}, "
      f"modalities {names}, {scene.n_tokens()} tokens, "
      f"days {scene.timestamps.tolist()}")

print("\n== the budget allocator ==")
rng = nd.stream(0, 99)
for alpha in (0.2, 5.0):
    draws = [dirichlet_allocate(60, 3, alpha, rng) for _ in range(3)]
    shown = ", ".join(str(d.tolist()) for d in draws)
    print(f"  alpha={alpha:3}: 60 tokens over 3 groups -> {shown}")
print("  small alpha concentrates the budget; large alpha evens it out")

for kind in Strategy:
    cfg = StrategyConfig(kind=kind, input_frac=0.4, target_frac=0.3)
    plan = sample_plan(scene, cfg, nd.stream(0, 7))
    print(f"\n== {kind.value} ==")
    print(f"  encoder sees timestamps {sorted(plan.input_ts) or 'any'}; "
          f"targets on {sorted(plan.target_ts) or 'any'}")
    for mi, name in enumerate(names):
        n_in = int(np.sum(plan.input_tokens[:, 0] == mi))
        n_tgt = int(np.sum(plan.target_tokens[:, 0] == mi))
        print(f"  {name:8s} {n_in:3d} input tokens, {n_tgt:3d} targets")
    overlap = plan.input_set() & plan.target_set()
    print(f"  input/target overlap: {len(overlap)} tokens; "
          f"violations: {validate_plan(plan, scene) or 'none'}")

print("\n== what CONSISTENT adds ==")
cfg = StrategyConfig(kind=Strategy.CONSISTENT, input_frac=0.4, target_frac=0.3)
plan = sample_plan(scene, cfg, nd.stream(0, 7))
tgt_coords = {(t, c) for _, t, c in plan.target_tokens.tolist()}
in_coords = {(t, c) for _, t, c in plan.input_tokens.tolist()}
print(f"  {len(tgt_coords)} target (t, cell) coordinates, "
      f"{len(tgt_coords & in_coords)} visible through any other modality")
print("  a hidden patch is hidden in every modality at once, so the model"
      "\n  cannot copy the answer from a co-registered sensor")
