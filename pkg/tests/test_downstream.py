import math

import numpy as np
import pytest

from tempofuse import downstream as D
from tempofuse import model as M
from tempofuse import nd
from tempofuse.downstream import (CONCAT, MEAN_POOL, FinetuneConfig,
                                  SubsamplePolicy)
from tempofuse.errors import ConfigError
from tempofuse.model import ModelConfig
from tempofuse.scenes import (Dynamics, ModalitySpec, RiskTask, SceneConfig,
                              generate_scene)


def scene_cfg(T=2, H=4, W=4, patch_px=2, V=8, static=False, kind="drift"):
    mods = [ModalitySpec("optical", vocab_size=V)]
    if static:
        mods.append(ModalitySpec("terrain", vocab_size=V, temporal=False))
    return SceneConfig(H=H, W=W, T=T, patch_px=patch_px,
                       modalities=tuple(mods),
                       dynamics=Dynamics(kind=kind, k=1),
                       day_start=10, day_step=37)


def make_scene(seed=0, **kw):
    return generate_scene(seed, scene_cfg(**kw))


def model_for(scene, **kw):
    defaults = dict(d_model=16, n_heads=2, enc_layers=2, dec_layers=1,
                    dtype="f32")
    defaults.update(kw)
    return ModelConfig.for_scene(scene, **defaults)


# ---------------------------------------------------------------------------
# Tap selection
# ---------------------------------------------------------------------------


def test_default_taps():
    assert D.default_taps(12) == (3, 6, 9, 12)
    assert D.default_taps(4) == (1, 2, 3, 4)
    assert D.default_taps(2) == (1, 2)
    assert D.default_taps(1) == (1,)
    with pytest.raises(ConfigError):
        D.default_taps(0)


def test_tap_validation():
    sc = make_scene()
    mcfg = model_for(sc)
    for bad in [(0, 1), (1, 1), (3,), (2, 1)]:
        with pytest.raises(ConfigError):
            D.resolve_taps(FinetuneConfig(tap_layers=bad), mcfg)
    assert D.resolve_taps(FinetuneConfig(), mcfg) == (1, 2)


def test_last_tap_equals_encode_output():
    sc = make_scene()
    mcfg = model_for(sc)
    pt = M.init_params(mcfg, 0).tensors()
    ts, lat = M.encode(sc, M.all_token_coords(sc), pt, mcfg)
    _, tapped = D.extract_features(sc, pt, mcfg, (1, mcfg.enc_layers))
    np.testing.assert_array_equal(tapped[mcfg.enc_layers].data, lat.data)
    for v in tapped.values():
        assert v.shape == (len(ts), mcfg.d_model)


def test_features_deterministic():
    sc = make_scene()
    mcfg = model_for(sc)
    pt = M.init_params(mcfg, 1).tensors()
    _, a = D.extract_features(sc, pt, mcfg, (2,))
    _, b = D.extract_features(sc, pt, mcfg, (2,))
    np.testing.assert_array_equal(a[2].data, b[2].data)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def full_token_set(scene):
    return M.build_token_set(scene, M.all_token_coords(scene))


def test_mean_pool_of_identical_frames_is_any_frame():
    sc = make_scene(T=3)
    ts = full_token_set(sc)
    n_cells = sc.H * sc.W
    frame = nd.stream(41, 0).normal(size=(n_cells, 5)).astype(np.float32)
    x = nd.wrap(np.tile(frame, (len(ts) // n_cells, 1)))
    fused = D.fuse(x, ts, sc, MEAN_POOL)
    np.testing.assert_allclose(fused.data, frame, atol=1e-6)


def test_mean_pool_invariant_under_frame_permutation():
    sc = make_scene(T=3)
    ts = full_token_set(sc)
    rng = nd.stream(41, 1)
    x = rng.normal(size=(len(ts), 6)).astype(np.float32)
    n_cells = sc.H * sc.W
    blocks = x.reshape(-1, n_cells, 6)
    perm = rng.permutation(blocks.shape[0])
    x2 = blocks[perm].reshape(len(ts), 6)
    a = D.fuse(nd.wrap(x), ts, sc, MEAN_POOL)
    b = D.fuse(nd.wrap(x2), ts, sc, MEAN_POOL)
    np.testing.assert_allclose(a.data, b.data, atol=1e-6)


def test_concat_not_invariant_and_channel_count():
    sc = make_scene(T=3, static=True)   # 3 temporal + 1 static frame
    ts = full_token_set(sc)
    rng = nd.stream(41, 2)
    x = rng.normal(size=(len(ts), 4)).astype(np.float32)
    fused = D.fuse(nd.wrap(x), ts, sc, CONCAT)
    assert fused.shape == (sc.H * sc.W, 4 * 4)
    n_cells = sc.H * sc.W
    blocks = x.reshape(-1, n_cells, 4)
    x2 = blocks[::-1].reshape(len(ts), 4)
    fused2 = D.fuse(nd.wrap(x2), ts, sc, CONCAT)
    assert not np.allclose(fused.data, fused2.data)


def test_concat_rejects_incomplete_frames():
    sc = make_scene(T=2)
    coords = M.all_token_coords(sc)[:-3]
    ts = M.build_token_set(sc, coords)
    x = nd.wrap(np.zeros((len(ts), 4), dtype=np.float32))
    with pytest.raises(ConfigError):
        D.fuse(x, ts, sc, CONCAT)
    # mean pooling happily accepts the same ragged set
    D.fuse(x, ts, sc, MEAN_POOL)


def test_mean_pool_gradient_flows():
    sc = make_scene(T=2)
    ts = full_token_set(sc)
    x = nd.wrap(np.ones((len(ts), 3), dtype=np.float64))
    with nd.Tape() as tape:
        fused = D.fuse(x, ts, sc, MEAN_POOL)
        loss = nd.mean(fused)
    g = tape.backward(loss).of(x)
    assert g.shape == x.shape
    assert np.all(g > 0)
    np.testing.assert_allclose(g.sum(), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Subsampling
# ---------------------------------------------------------------------------


def test_subsample_identity():
    sc = make_scene()
    rng = nd.stream(42, 0)
    full = M.all_token_coords(sc)
    for kind in ("none", "image_level", "patch_level"):
        got = D.subsample_tokens(sc, SubsamplePolicy(kind, 1.0), rng)
        np.testing.assert_array_equal(got, full)


def test_patch_level_third_of_three_frames():
    sc = make_scene(T=3)
    rng = nd.stream(42, 1)
    coords = D.subsample_tokens(sc, SubsamplePolicy("patch_level", 1 / 3), rng)
    n_cells = sc.H * sc.W
    assert len(coords) == n_cells
    assert sorted(coords[:, 2].tolist()) == list(range(n_cells))


def test_image_level_keeps_whole_frames():
    sc = make_scene(T=4)
    rng = nd.stream(42, 2)
    coords = D.subsample_tokens(sc, SubsamplePolicy("image_level", 0.5), rng)
    n_cells = sc.H * sc.W
    assert len(coords) == 2 * n_cells
    frames = set(map(tuple, coords[:, :2].tolist()))
    assert len(frames) == 2
    for mt in frames:
        rows = coords[(coords[:, 0] == mt[0]) & (coords[:, 1] == mt[1])]
        assert sorted(rows[:, 2].tolist()) == list(range(n_cells))


def test_every_cell_keeps_a_token():
    sc = make_scene(T=5, static=True)
    rng = nd.stream(42, 3)
    for kind in ("image_level", "patch_level"):
        for frac in (0.17, 0.34, 0.5):
            coords = D.subsample_tokens(sc, SubsamplePolicy(kind, frac), rng)
            assert set(coords[:, 2].tolist()) == set(range(sc.H * sc.W))


def test_patch_level_frame_frequency_uniform():
    sc = make_scene(T=3, H=2, W=2)
    rng = nd.stream(42, 4)
    n_frames, keep = 3, 1
    counts = np.zeros(n_frames)
    draws = 1000
    for _ in range(draws):
        coords = D.subsample_tokens(
            sc, SubsamplePolicy("patch_level", 1 / 3), rng)
        for t in coords[:, 1]:
            counts[t] += 1
    n = draws * sc.H * sc.W * keep
    p = keep / n_frames
    sigma = math.sqrt(n * p * (1 - p))
    np.testing.assert_allclose(counts, n * p, atol=3 * sigma)


def test_bad_policies_rejected():
    with pytest.raises(ConfigError):
        SubsamplePolicy("patch_level", 0.0)
    with pytest.raises(ConfigError):
        SubsamplePolicy("patch_level", 1.2)
    with pytest.raises(ConfigError):
        SubsamplePolicy("bogus", 0.5)


# ---------------------------------------------------------------------------
# Time shuffling and flips
# ---------------------------------------------------------------------------


def test_shuffle_times_identity_on_t1():
    sc = make_scene(T=1)
    out, perm = D.shuffle_times(sc, nd.stream(43, 0))
    assert perm is None and out is sc


def test_shuffle_times_round_trip():
    sc = make_scene(T=4, static=True)
    shuffled, perm = D.shuffle_times(sc, nd.stream(43, 1))
    assert sorted(perm.tolist()) == list(range(4))
    assert not np.array_equal(perm, np.arange(4))
    np.testing.assert_array_equal(shuffled.timestamps, sc.timestamps)
    np.testing.assert_array_equal(shuffled.tokens["terrain"],
                                  sc.tokens["terrain"])
    assert not np.array_equal(shuffled.tokens["optical"], sc.tokens["optical"])
    back = D.apply_time_permutation(shuffled, np.argsort(perm))
    np.testing.assert_array_equal(back.tokens["optical"], sc.tokens["optical"])
    np.testing.assert_array_equal(back.latent, sc.latent)


def test_shuffle_moves_content_not_labels():
    sc = make_scene(T=3)
    shuffled, perm = D.shuffle_times(sc, nd.stream(43, 2))
    for slot in range(3):
        np.testing.assert_array_equal(shuffled.tokens["optical"][slot],
                                      sc.tokens["optical"][perm[slot]])


def test_flip_consistent_across_frames_and_modalities():
    sc = make_scene(T=3, static=True)
    f = D.flip_scene(sc, flip_v=True, flip_h=False)
    for name, tok in sc.tokens.items():
        for t in range(tok.shape[0]):
            np.testing.assert_array_equal(f.tokens[name][t], tok[t][::-1])
    lab = np.arange(64).reshape(8, 8)
    np.testing.assert_array_equal(D.flip_label(lab, True, True),
                                  lab[::-1, ::-1])
    assert D.flip_scene(sc, False, False) is sc


# ---------------------------------------------------------------------------
# Head
# ---------------------------------------------------------------------------


def test_head_output_reaches_pixel_resolution():
    sc = make_scene(patch_px=4)
    fcfg = FinetuneConfig(head_widths=(8, 4), n_classes=3)
    hp_arrays = D.init_head(6, sc.patch_px, fcfg, seed=0)
    hp = {k: nd.wrap(v) for k, v in hp_arrays.items()}
    fused = nd.wrap(nd.stream(44, 0).normal(
        size=(sc.H * sc.W, 6)).astype(np.float32))
    out = D.head_forward(fused, hp, sc, fcfg)
    assert out.shape == (sc.H * 4, sc.W * 4, 3)
    assert np.all(np.isfinite(out.data))


def test_head_width_shortage_rejected():
    with pytest.raises(ConfigError):
        D.init_head(6, 4, FinetuneConfig(head_widths=(8,)), seed=0)
    with pytest.raises(ConfigError):
        D.init_head(6, 3, FinetuneConfig(), seed=0)   # not a power of 2


def test_conv3x3_matches_direct_convolution():
    rng = nd.stream(44, 1)
    x = rng.normal(size=(5, 6, 3))
    w = rng.normal(size=(9, 3, 2))
    b = rng.normal(size=2)
    out = D._conv3x3(nd.wrap(x), nd.wrap(w), nd.wrap(b))
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    want = np.zeros((5, 6, 2))
    for i in range(5):
        for j in range(6):
            for k in range(9):
                dy, dx = divmod(k, 3)
                want[i, j] += xp[i + dy, j + dx] @ w[k]
    want += b
    np.testing.assert_allclose(out.data, want, atol=1e-10)


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------


def spatial_tasks(n_train=6, n_val=3, seed=0, **kw):
    """Label depends only on pixel row: linearly separable from spatial PE."""
    tasks = []
    for i in range(n_train + n_val):
        sc = make_scene(seed=seed + i, **kw)
        hpx = sc.H * sc.patch_px
        wpx = sc.W * sc.patch_px
        label = (np.arange(hpx)[:, None] < hpx // 2) * np.ones(
            (1, wpx), dtype=np.int64)
        label = label.astype(np.uint8)
        split = "train" if i < n_train else "val"
        tasks.append(RiskTask(scene=sc, label=label, split=split,
                              seed=seed + i))
    return tasks


@pytest.mark.slow
def test_frozen_finetune_solves_separable_task():
    # the label is a fixed function of pixel position, so flips would make
    # the task self-contradictory: augmentation stays off here
    tasks = spatial_tasks()
    mcfg = model_for(tasks[0].scene)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, lr=1e-2, epochs=10, patience=10,
                          head_widths=(16,), seed=1, augment=False)
    state, trace = D.finetune(tasks, params, mcfg, fcfg)
    best = max(r[3] for r in trace)
    assert best > 90.0, f"val mIoU {best:.1f}"


def test_early_stopping_respects_patience():
    tasks = spatial_tasks(n_train=2, n_val=1)
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, lr=1e-4, epochs=60, patience=2,
                          head_widths=(4,), seed=2, augment=False)
    state, trace = D.finetune(tasks, params, mcfg, fcfg)
    if len(trace) < fcfg.epochs:   # stopped early
        metrics = [r[3] for r in trace]
        best_epoch = int(np.argmax(metrics))
        assert len(trace) - 1 - best_epoch == fcfg.patience
    assert len(trace) >= 3


def test_finetune_is_deterministic():
    tasks = spatial_tasks(n_train=2, n_val=1)
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, lr=1e-3, epochs=3, patience=3,
                          head_widths=(4,), seed=3)
    s1, t1 = D.finetune(tasks, params, mcfg, fcfg)
    s2, t2 = D.finetune(tasks, params, mcfg, fcfg)
    # everything except the wall-time column must replay exactly
    assert [(e, l, m) for e, _, l, m in t1] == [(e, l, m) for e, _, l, m in t2]
    for k in s1.values:
        np.testing.assert_array_equal(s1.values[k], s2.values[k])


def test_full_finetune_updates_backbone():
    tasks = spatial_tasks(n_train=2, n_val=1)
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=False, lr=1e-3, epochs=2, patience=2,
                          head_widths=(4,), seed=4)
    state, _ = D.finetune(tasks, params, mcfg, fcfg)
    moved = [k for k in state.values
             if k.startswith("backbone/")
             and not np.array_equal(state.values[k],
                                    params.values[k.split("/", 1)[1]])]
    assert moved


def test_risk_head_pipeline(tmp_path):
    tasks = spatial_tasks(n_train=2, n_val=1)
    # borrow the spatial labels for a binary risk problem, add a test split
    extra = spatial_tasks(n_train=0, n_val=2, seed=50)
    for t in extra:
        tasks.append(RiskTask(scene=t.scene, label=t.label, split="test",
                              seed=t.seed))
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, head_kind="risk", lr=3e-3,
                          epochs=6, patience=6, head_widths=(8,), seed=5,
                          augment=False)
    state, trace = D.finetune(tasks, params, mcfg, fcfg)
    probs = D.predict(tasks[0].scene, state)
    assert probs.shape == tasks[0].label.shape
    assert probs.min() >= 0.0 and probs.max() <= 1.0
    report, maps = D.evaluate_risk(tasks, state)
    assert set(report) >= {"threshold", "f1_event", "brier", "rmse"}
    assert len(maps) == 2
    assert 0.0 <= report["threshold"] <= 1.0


def test_late_fusion_baseline_runs():
    tasks = spatial_tasks(n_train=2, n_val=1, T=3)
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, late_fusion=True, lr=1e-3,
                          epochs=2, patience=2, head_widths=(4,), seed=6)
    state, trace = D.finetune(tasks, params, mcfg, fcfg)
    assert len(trace) == 2
    pred = D.predict(tasks[0].scene, state)
    assert pred.shape == tasks[0].label.shape


def test_probe_time_shuffle_runs():
    tasks = spatial_tasks(n_train=2, n_val=1, T=3)
    test_tasks = spatial_tasks(n_train=0, n_val=2, seed=60, T=3)
    for t in test_tasks:
        tasks.append(RiskTask(scene=t.scene, label=t.label, split="test",
                              seed=t.seed))
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    fcfg = FinetuneConfig(freeze_encoder=True, lr=1e-3, epochs=2, patience=2,
                          head_widths=(4,), seed=7)
    state, _ = D.finetune(tasks, params, mcfg, fcfg)
    rep = D.probe_time_shuffle(tasks, state)
    assert set(rep) == {"ordered", "shuffled", "delta", "skipped_t1"}
    assert rep["delta"] == pytest.approx(rep["ordered"] - rep["shuffled"])


def test_finetune_needs_both_splits():
    tasks = spatial_tasks(n_train=2, n_val=0)
    mcfg = model_for(tasks[0].scene, enc_layers=1)
    params = M.init_params(mcfg, 0)
    with pytest.raises(ConfigError):
        D.finetune(tasks, params, mcfg, FinetuneConfig(head_widths=(4,)))


def test_config_validation():
    with pytest.raises(ConfigError):
        FinetuneConfig(fusion="avg")
    with pytest.raises(ConfigError):
        FinetuneConfig(head_kind="other")
    with pytest.raises(ConfigError):
        FinetuneConfig(n_classes=1)
    with pytest.raises(ConfigError):
        FinetuneConfig(lr=0.0)
    with pytest.raises(ConfigError):
        FinetuneConfig(head_widths=())
