"""Determinism, on-disk formats, and mid-run resume.

Everything this package writes is replayable: scenes and checkpoints
round-trip bit-exactly through their binary containers, the same seed
produces byte-identical training traces, and a run killed at any
checkpoint continues to exactly the parameters the uninterrupted run
would have reached - the update stream is keyed by (seed, step), not by
wall clock or call history.
"""

import tempfile
from pathlib import Path

import numpy as np

from tempofuse import train as T
from tempofuse.masking import StrategyConfig
from tempofuse.model import ModelConfig
from tempofuse.scenes import SceneConfig, generate_scene, read_scene, write_scene

root = Path(tempfile.mkdtemp(prefix="tempofuse_demo_"))
pool = [generate_scene(500 + i, SceneConfig(H=4, W=2, T=2, patch_px=2))
        for i in range(4)]
mcfg = ModelConfig.for_scene(pool[0], d_model=16, n_heads=2,
                             enc_layers=1, dec_layers=1)
tcfg = T.TrainConfig(total_steps=40, batch_size=2, max_lr=1e-3, seed=3,
                     checkpoint_every=10)

print("== scenes round-trip bit-exactly ==")
write_scene(root / "scene.tfsc", pool[0])
back = read_scene(root / "scene.tfsc")
same = all(np.array_equal(back.tokens[m.name], pool[0].tokens[m.name])
           for m in pool[0].modalities)
size = (root / "scene.tfsc").stat().st_size
print(f"  {size} bytes on disk, tokens identical after reload: {same}")

print("\n== identical seeds, identical traces ==")
T.pretrain(pool, StrategyConfig(), mcfg, tcfg, out_dir=root / "a")
T.pretrain(pool, StrategyConfig(), mcfg, tcfg, out_dir=root / "b")
csv_a = (root / "a" / "trace.csv").read_bytes()
csv_b = (root / "b" / "trace.csv").read_bytes()
print(f"  trace.csv byte-identical across runs: {csv_a == csv_b}")

print("\n== resume lands exactly on the uninterrupted run ==")
full, _, _ = T.pretrain(pool, StrategyConfig(), mcfg, tcfg)
mid_params, mid_opt = T.load_state(root / "a" / "ckpt_000010.tfck")
print(f"  checkpoint taken at step {mid_params.step}, "
      f"optimizer moments included: {mid_opt is not None}")
resumed, _, _ = T.pretrain(pool, StrategyConfig(), mcfg, tcfg,
                           resume=(mid_params, mid_opt))
worst = max(float(np.max(np.abs(resumed.values[k] - full.values[k])))
            for k in full.values)
print(f"  max |resumed - uninterrupted| over all parameters: {worst:.1e}")

print(f"\nartifacts under {root}")
