"""Synthetic multimodal scene grids with controllable temporal structure.

A scene is an H x W grid of patch tokens observed at T acquisition days.
Everything is rendered from one shared latent field, generated at pixel
resolution (patch_px pixels per patch side) and evolved by a declared rule:

  persistence  frame(t) = frame(0)
  drift        frame(t) = frame(0) circularly shifted k*t patches along W
  seasonal     frame(t) = 0.5 + 0.5*A*sin(2*pi*day_t/365.25 + phase(px))

Each modality is a deterministic rendering of the shared latent (identity,
inverted, contrast), optionally static (a single frame rendered from the
time-invariant base field, like elevation).  Channel values live in [0,1];
tokens are uniform quantizations of the channel mean.  Because the
dynamics are known in closed form, cross-time information flow is testable:
with zero noise every later frame is a known function of the first (or of
the base field and the day, for seasonal).

Scenes serialize to a little-endian "TFSC" container, documented below,
with bit-exact round trips.

TFSC v1 layout (all integers little-endian):

  offset  size  field
  0       4     magic b"TFSC"
  4       2     version u16 = 1
  6       2     H (patches)
  8       2     W (patches)
  10      2     T (timestamps)
  12      2     M (modality count)
  14      2     patch_px
  16      8     seed u64
  24      8*T   timestamps i64[T], strictly increasing
  --      --    M modality entries:
                  u16 name length, utf-8 name bytes,
                  u16 channels, u16 vocab, u8 temporal, u8 rendering code
  --      --    per modality, in table order:
                  tokens  u16[T_m*H*W]          (T_m = T if temporal else 1)
                  values  f32[T_m*H*W*channels]
  --      --    latent  f32[T * H*patch_px * W*patch_px]
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from tempofuse.errors import ConfigError, DataError
from tempofuse.nd import stream

__all__ = [
    "ModalitySpec",
    "Dynamics",
    "SceneConfig",
    "Scene",
    "RiskTask",
    "RiskConfig",
    "generate_scene",
    "quantize",
    "dequantize",
    "make_risk_dataset",
    "write_scene",
    "read_scene",
    "write_manifest",
    "read_manifest",
]

MAGIC = b"TFSC"
VERSION = 1

DAYS_PER_YEAR = 365.25

# rng sub-stream codes (scene)
_S_FIELD, _S_NOISE, _S_DAY0, _S_KPICK = 0, 1, 2, 3
# rng sub-stream codes (risk dataset); split codes offset scene seeds so the
# train/val/test seed sets are disjoint by construction
SPLIT_SEED_OFFSET = {"train": 0, "val": 10_000_000, "test": 20_000_000}

RENDERINGS = ("identity", "inverted", "contrast")


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    vocab_size: int = 16
    channels: int = 1
    temporal: bool = True
    rendering: str = "identity"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"modality {self.name}: vocab_size must be >= 2")
        if self.channels < 1:
            raise ConfigError(f"modality {self.name}: channels must be >= 1")
        if self.rendering not in RENDERINGS:
            raise ConfigError(
                f"modality {self.name}: unknown rendering {self.rendering!r}"
            )


@dataclass(frozen=True)
class Dynamics:
    kind: str = "persistence"  # persistence | drift | seasonal
    k: int = 1                 # drift: patches shifted per frame step
    k_choices: tuple = ()      # drift: if non-empty, per-scene k drawn from here
    amplitude: float = 1.0     # seasonal
    noise: float = 0.0         # bounded uniform +-noise added per frame pixel

    def __post_init__(self):
        if self.kind not in ("persistence", "drift", "seasonal"):
            raise ConfigError(f"unknown dynamics kind {self.kind!r}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")


@dataclass(frozen=True)
class SceneConfig:
    H: int = 8
    W: int = 8
    T: int = 4
    patch_px: int = 4
    modalities: tuple = (
        ModalitySpec("optical", rendering="identity"),
        ModalitySpec("radar", rendering="inverted"),
    )
    dynamics: Dynamics = Dynamics()
    day_start: int | None = None  # None: drawn uniformly from [0, 3650]
    day_step: int = 91            # spacing between consecutive timestamps
    smooth_px: float = 6.0        # gaussian smoothing radius of the base field

    def __post_init__(self):
        if self.H < 1 or self.W < 1 or self.T < 1:
            raise ConfigError("H, W, T must all be >= 1")
        if self.patch_px < 1:
            raise ConfigError("patch_px must be >= 1")
        if not self.modalities:
            raise ConfigError("at least one modality is required")
        if len({m.name for m in self.modalities}) != len(self.modalities):
            raise ConfigError("modality names must be unique")
        if self.day_step < 1:
            raise ConfigError("day_step must be >= 1 (timestamps strictly increase)")


@dataclass
class Scene:
    """One multimodal, multitemporal token grid plus its source latent."""

    H: int
    W: int
    patch_px: int
    timestamps: np.ndarray                  # (T,) i64, strictly increasing
    modalities: tuple                       # tuple[ModalitySpec]
    tokens: dict                            # name -> (T_m, H, W) u16
    values: dict                            # name -> (T_m, H, W, C) f32
    latent: np.ndarray | None               # (T, H*px, W*px) f32, not always kept
    seed: int

    @property
    def T(self) -> int:
        return len(self.timestamps)

    def frames_of(self, spec: ModalitySpec) -> int:
        return self.T if spec.temporal else 1

    def n_tokens(self) -> int:
        return sum(self.frames_of(m) * self.H * self.W for m in self.modalities)

    def token_days(self, spec: ModalitySpec) -> np.ndarray:
        """Acquisition day per frame; static modalities share timestamps[0]."""
        if spec.temporal:
            return self.timestamps
        return self.timestamps[:1]

    def validate(self) -> None:
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        for m in self.modalities:
            tok = self.tokens[m.name]
            if tok.shape != (self.frames_of(m), self.H, self.W):
                raise DataError(f"token plane shape mismatch for {m.name}")
            if tok.max(initial=0) >= m.vocab_size:
                raise DataError(f"token id out of range for {m.name}")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _base_field(seed: int, cfg: SceneConfig) -> np.ndarray:
    """Smoothed uniform noise in [0,1] at pixel resolution, wrap-around."""
    hp, wp = cfg.H * cfg.patch_px, cfg.W * cfg.patch_px
    raw = stream(seed, _S_FIELD).random(size=(hp, wp))
    sm = ndimage.gaussian_filter(raw, sigma=cfg.smooth_px, mode="wrap")
    lo, hi = sm.min(), sm.max()
    if hi - lo < 1e-12:
        return np.full_like(sm, 0.5)
    return (sm - lo) / (hi - lo)


def _pick_k(seed: int, dyn: Dynamics) -> int:
    if dyn.kind == "drift" and dyn.k_choices:
        choices = np.asarray(dyn.k_choices)
        return int(choices[stream(seed, _S_KPICK).integers(0, len(choices))])
    return dyn.k


def _evolve(base: np.ndarray, days: np.ndarray, dyn: Dynamics, k: int,
            patch_px: int) -> np.ndarray:
    """Pixel latent frames (T, Hpx, Wpx) under the declared rule, no noise."""
    T = len(days)
    if dyn.kind == "persistence":
        return np.repeat(base[None], T, axis=0)
    if dyn.kind == "drift":
        frames = [np.roll(base, k * t * patch_px, axis=1) for t in range(T)]
        return np.stack(frames)
    # seasonal: per-pixel phase from the base field
    phase = 2.0 * np.pi * base
    ang = 2.0 * np.pi * days[:, None, None] / DAYS_PER_YEAR + phase[None]
    return 0.5 + 0.5 * dyn.amplitude * np.sin(ang)


def _patch_means(px_field: np.ndarray, patch_px: int) -> np.ndarray:
    """Block-average pixels into patches; works on (..., Hpx, Wpx)."""
    *lead, hp, wp = px_field.shape
    h, w = hp // patch_px, wp // patch_px
    blocked = px_field.reshape(*lead, h, patch_px, w, patch_px)
    return blocked.mean(axis=(-3, -1))


def _render(latent: np.ndarray, spec: ModalitySpec) -> np.ndarray:
    if spec.rendering == "identity":
        v = latent
    elif spec.rendering == "inverted":
        v = 1.0 - latent
    else:  # contrast
        v = latent * latent
    # per-channel gains keep channels distinct but monotone in the latent
    gains = 1.0 - 0.5 * np.arange(spec.channels) / max(spec.channels, 1)
    return np.clip(v[..., None] * gains, 0.0, 1.0)


def quantize(values: np.ndarray, vocab_size: int, lo: float = 0.0,
             hi: float = 1.0) -> np.ndarray:
    """Uniform binning of the channel mean into [0, vocab_size) token ids.

    values: (..., C) finite channel values; the reduction is the mean over
    the trailing channel axis.  Values at or above `hi` clip into the top
    bin; values at `lo` map to bin 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ConfigError("quantize requires finite values")
    m = v if v.ndim == 0 else v.mean(axis=-1)
    scaled = (m - lo) / (hi - lo) * vocab_size
    return np.clip(np.floor(scaled), 0, vocab_size - 1).astype(np.uint16)


def dequantize(tokens: np.ndarray, vocab_size: int, lo: float = 0.0,
               hi: float = 1.0) -> np.ndarray:
    """Bin centers of token ids."""
    t = np.asarray(tokens, dtype=np.float64)
    return lo + (t + 0.5) * (hi - lo) / vocab_size


def generate_scene(seed: int, cfg: SceneConfig, keep_latent: bool = True) -> Scene:
    """Deterministic scene for (seed, cfg)."""
    dyn = cfg.dynamics
    base = _base_field(seed, cfg)
    if cfg.day_start is None:
        day0 = int(stream(seed, _S_DAY0).integers(0, 3650))
    else:
        day0 = int(cfg.day_start)
    days = day0 + cfg.day_step * np.arange(cfg.T, dtype=np.int64)
    k = _pick_k(seed, dyn)

    px = _evolve(base, days, dyn, k, cfg.patch_px)
    if dyn.noise > 0:
        noise = stream(seed, _S_NOISE).uniform(-dyn.noise, dyn.noise, size=px.shape)
        px = np.clip(px + noise, 0.0, 1.0)

    patch_latent = _patch_means(px, cfg.patch_px)          # (T, H, W)
    static_latent = _patch_means(base, cfg.patch_px)       # (H, W)

    tokens, values = {}, {}
    for spec in cfg.modalities:
        src = patch_latent if spec.temporal else static_latent[None]
        vals = _render(src, spec).astype(np.float32)
        tokens[spec.name] = quantize(vals, spec.vocab_size)
        values[spec.name] = vals

    scene = Scene(
        H=cfg.H, W=cfg.W, patch_px=cfg.patch_px, timestamps=days,
        modalities=tuple(cfg.modalities), tokens=tokens, values=values,
        latent=px.astype(np.float32) if keep_latent else None, seed=int(seed),
    )
    scene.validate()
    return scene


# ---------------------------------------------------------------------------
# Downstream task datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskConfig:
    scene: SceneConfig = SceneConfig()
    event: str = "flood"        # flood | newly_flooded | phase_class
    threshold: float | None = None  # None: per-task prevalence quantile
    prevalence: float = 0.10
    horizon_steps: int = 1      # persistence/drift: virtual steps past last frame
    horizon_days: int = 91      # seasonal: days past last frame
    phase_band: tuple = (0.0, np.pi)  # phase_class: label-1 phase interval
    n_train: int = 16
    n_val: int = 8
    n_test: int = 8

    def __post_init__(self):
        if self.event not in ("flood", "newly_flooded", "phase_class"):
            raise ConfigError(f"unknown event rule {self.event!r}")
        if self.threshold is None and not (0.0 < self.prevalence < 1.0):
            raise ConfigError("prevalence must lie in (0, 1)")
        if self.event == "phase_class" and self.scene.dynamics.kind != "seasonal":
            raise ConfigError("phase_class labels require seasonal dynamics")


@dataclass
class RiskTask:
    """Pre-event scene plus the pixel label derived from the latent future."""

    scene: Scene
    label: np.ndarray   # (H*px, W*px) u8 in {0,1}
    split: str
    seed: int


def _future_pixels(seed: int, cfg: RiskConfig) -> tuple:
    """(pre_scene, last_pre_px, future_px) for the event rules."""
    sc = cfg.scene
    scene = generate_scene(seed, sc, keep_latent=True)
    dyn = sc.dynamics
    base = _base_field(seed, sc)
    k = _pick_k(seed, dyn)
    if dyn.kind == "seasonal":
        fut_day = np.array([int(scene.timestamps[-1]) + cfg.horizon_days])
        future = _evolve(base, fut_day, dyn, k, sc.patch_px)[0]
    else:
        t_idx = np.arange(sc.T + cfg.horizon_steps)
        fake_days = scene.timestamps[0] + sc.day_step * t_idx
        future = _evolve(base, fake_days, dyn, k, sc.patch_px)[-1]
    last_pre = scene.latent[-1].astype(np.float64)
    return scene, last_pre, future


def _event_label(seed: int, cfg: RiskConfig) -> tuple:
    if cfg.event == "phase_class":
        sc = cfg.scene
        scene = generate_scene(seed, sc, keep_latent=True)
        base = _base_field(seed, sc)
        phase = np.mod(2.0 * np.pi * base, 2.0 * np.pi)
        lo, hi = cfg.phase_band
        label = ((phase >= lo) & (phase < hi)).astype(np.uint8)
        return scene, label

    scene, last_pre, future = _future_pixels(seed, cfg)
    if cfg.threshold is not None:
        theta = float(cfg.threshold)
    else:
        theta = float(np.quantile(future, cfg.prevalence))
    flooded = future < theta
    if cfg.event == "newly_flooded":
        label = (flooded & ~(last_pre < theta)).astype(np.uint8)
    else:
        label = flooded.astype(np.uint8)
    return scene, label


def make_risk_dataset(seed: int, cfg: RiskConfig) -> list:
    """RiskTasks for all three splits; seed sets pairwise disjoint."""
    tasks = []
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for split, n in counts.items():
        for i in range(n):
            task_seed = int(seed) + SPLIT_SEED_OFFSET[split] + i
            scene, label = _event_label(task_seed, cfg)
            tasks.append(RiskTask(scene=scene, label=label, split=split,
                                  seed=task_seed))
    return tasks


# ---------------------------------------------------------------------------
# TFSC serialization
# ---------------------------------------------------------------------------


def _pack_scene(scene: Scene) -> bytes:
    buf = io.BytesIO()
    hp = scene.H * scene.patch_px
    wp = scene.W * scene.patch_px
    buf.write(MAGIC)
    buf.write(struct.pack("<HHHHHHQ", VERSION, scene.H, scene.W, scene.T,
                          len(scene.modalities), scene.patch_px, scene.seed))
    buf.write(np.asarray(scene.timestamps, dtype="<i8").tobytes())
    for m in scene.modalities:
        name = m.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<HHBB", m.channels, m.vocab_size, int(m.temporal),
                              RENDERINGS.index(m.rendering)))
    for m in scene.modalities:
        buf.write(np.ascontiguousarray(scene.tokens[m.name], dtype="<u2").tobytes())
        buf.write(np.ascontiguousarray(scene.values[m.name], dtype="<f4").tobytes())
    latent = scene.latent
    if latent is None:
        latent = np.zeros((scene.T, hp, wp), dtype=np.float32)
    buf.write(np.ascontiguousarray(latent, dtype="<f4").tobytes())
    return buf.getvalue()


def write_scene(path, scene: Scene) -> None:
    Path(path).write_bytes(_pack_scene(scene))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.off, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DataError(f"{self.path}: truncated scene file")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_scene(path) -> Scene:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not a TFSC scene file")
    version, H, W, T, M, patch_px, seed = r.unpack("<HHHHHHQ")
    if version != VERSION:
        raise DataError(f"{path}: unsupported TFSC version {version}")
    timestamps = np.frombuffer(r.take(8 * T), dtype="<i8").copy()
    specs = []
    for _ in range(M):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        channels, vocab, temporal, rend = r.unpack("<HHBB")
        if rend >= len(RENDERINGS):
            raise DataError(f"{path}: unknown rendering code {rend}")
        specs.append(ModalitySpec(name=name, vocab_size=vocab, channels=channels,
                                  temporal=bool(temporal),
                                  rendering=RENDERINGS[rend]))
    tokens, values = {}, {}
    for m in specs:
        tm = T if m.temporal else 1
        tok = np.frombuffer(r.take(2 * tm * H * W), dtype="<u2")
        tokens[m.name] = tok.reshape(tm, H, W).copy()
        val = np.frombuffer(r.take(4 * tm * H * W * m.channels), dtype="<f4")
        values[m.name] = val.reshape(tm, H, W, m.channels).copy()
    hp, wp = H * patch_px, W * patch_px
    latent = np.frombuffer(r.take(4 * T * hp * wp), dtype="<f4")
    latent = latent.reshape(T, hp, wp).copy()
    if r.off != len(r.data):
        raise DataError(f"{path}: {len(r.data) - r.off} trailing bytes")
    scene = Scene(H=H, W=W, patch_px=patch_px, timestamps=timestamps,
                  modalities=tuple(specs), tokens=tokens, values=values,
                  latent=latent, seed=seed)
    scene.validate()
    return scene


def scene_equal(a: Scene, b: Scene) -> bool:
    """Bit-exact equality of persisted content."""
    return _pack_scene(a) == _pack_scene(b)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def write_manifest(path, records: list) -> None:
    """Line-delimited {path, split, seed} records."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps({"path": str(rec["path"]), "split": rec["split"],
                                "seed": int(rec["seed"])}, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    out = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: bad manifest line") from e
            missing = {"path", "split", "seed"} - rec.keys()
            if missing:
                raise DataError(f"{path}:{line_no}: missing {sorted(missing)}")
            out.append(rec)
    return out
