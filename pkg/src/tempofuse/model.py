"""Encoder-decoder transformer over mixed modality/timestamp token sets.

Input tokens embed as token-id lookup + learned modality embedding + fixed
2D sinusoidal spatial encoding.  Time is deliberately absent from the
embedding: it enters attention only, through rotary rotation of queries
and keys by each token's acquisition day.  The decoder receives pure
positional queries (modality + spatial encoding, no token content) for the
coordinates it must predict, attends over them, cross-attends to encoder
latents, and ends in per-modality linear classification heads trained with
cross entropy.

Spatial encoding closed form, for cell (r, c) and d = d_model:
half = d/2 encodes the row, the other half the column; within a half,
pair j of axis value p is (sin(p * w_j), cos(p * w_j)) with
w_j = 10000^(-2j/(d/2)).  Cell (0, 0) is therefore [0, 1, 0, 1, ...].

A late-fusion baseline encodes each timestamp independently (attention
restricted to same-day tokens), which is computed frame by frame so its
cost grows linearly in the number of frames.

Checkpoints serialize to a little-endian "TFCK" container:

  magic b"TFCK" | u16 version=1 | u32 json length | config json (utf-8)
  | u64 step | u32 param count | then per parameter, sorted by name:
  u16 name length | name utf-8 | u8 dtype (0=f32, 1=f64) | u8 ndim
  | u32 per-dim extents | raw little-endian payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from tempofuse import nd, rope
from tempofuse.errors import ConfigError, DataError
from tempofuse.masking import MaskPlan
from tempofuse.scenes import Scene

__all__ = [
    "ModelConfig",
    "Params",
    "TokenSet",
    "spatial_encoding",
    "attention",
    "attention_weights",
    "build_token_set",
    "embed",
    "encode",
    "decode",
    "forward_loss",
    "late_fusion_encode",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
]

CKPT_MAGIC = b"TFCK"
CKPT_VERSION = 1

MASK_OFF = -1e9  # additive logit for forbidden attention pairs


@dataclass(frozen=True)
class ModelConfig:
    modalities: tuple            # ((name, vocab_size), ...) in scene order
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    max_h: int = 16
    max_w: int = 16
    rope_base: float = 10000.0
    use_rope: bool = True
    rope_in_cross_attention: bool = True
    dtype: str = "f32"           # f32 | f64 (f64 for gradient checks)

    def __post_init__(self):
        if not self.modalities:
            raise ConfigError("model needs at least one modality")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must divide evenly into heads")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even for rotary pairing")
        if self.d_model % 4 != 0:
            raise ConfigError("d_model must be divisible by 4 (2D sinusoids)")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise ConfigError("layer counts must be >= 0")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        for name, v in self.modalities:
            if v < 2:
                raise ConfigError(f"modality {name}: vocab must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def vocab_of(self, modality_idx: int) -> int:
        return self.modalities[modality_idx][1]

    @classmethod
    def for_scene(cls, scene: Scene, **overrides) -> "ModelConfig":
        mods = tuple((m.name, m.vocab_size) for m in scene.modalities)
        overrides.setdefault("max_h", max(16, scene.H))
        overrides.setdefault("max_w", max(16, scene.W))
        return cls(modalities=mods, **overrides)

    def to_json(self) -> str:
        d = {
            "modalities": [[n, v] for n, v in self.modalities],
            "d_model": self.d_model, "n_heads": self.n_heads,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "max_h": self.max_h, "max_w": self.max_w,
            "rope_base": self.rope_base, "use_rope": self.use_rope,
            "rope_in_cross_attention": self.rope_in_cross_attention,
            "dtype": self.dtype,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["modalities"] = tuple((n, int(v)) for n, v in d["modalities"])
        return cls(**d)


@dataclass
class Params:
    """All learnable arrays plus the config that shaped them."""

    cfg: ModelConfig
    values: dict                 # canonical name -> ndarray
    step: int = 0

    def tensors(self) -> dict:
        return {k: nd.wrap(v) for k, v in self.values.items()}

    def n_parameters(self) -> int:
        return sum(v.size for v in self.values.values())


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _tn(rng, *shape, sigma=0.02):
    """Truncated normal (+-2 sigma) init."""
    return truncnorm.rvs(-2.0, 2.0, scale=sigma, size=shape, random_state=rng)


def init_params(cfg: ModelConfig, seed: int) -> Params:
    rng = nd.stream(seed, 0xB00)
    dt = cfg.np_dtype
    d = cfg.d_model
    p = {}

    def put(name, arr):
        p[name] = np.ascontiguousarray(arr, dtype=dt)

    # unit-norm rows, matching the spatial table; 0.02 here leaves content
    # a rounding error next to position and copy rules never get learned
    for name, vocab in cfg.modalities:
        put(f"embed/token/{name}", _tn(rng, vocab, d, sigma=d ** -0.5))
    put("embed/modality", _tn(rng, len(cfg.modalities), d, sigma=d ** -0.5))

    def attn_block(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            put(f"{prefix}/{w}", _tn(rng, d, d))
        for b in ("bq", "bk", "bv", "bo"):
            put(f"{prefix}/{b}", np.zeros(d))

    def ln(prefix):
        put(f"{prefix}/g", np.ones(d))
        put(f"{prefix}/b", np.zeros(d))

    def mlp(prefix):
        put(f"{prefix}/w1", _tn(rng, d, 4 * d))
        put(f"{prefix}/b1", np.zeros(4 * d))
        put(f"{prefix}/w2", _tn(rng, 4 * d, d))
        put(f"{prefix}/b2", np.zeros(d))

    for i in range(cfg.enc_layers):
        ln(f"enc{i}/ln1"); attn_block(f"enc{i}/attn")
        ln(f"enc{i}/ln2"); mlp(f"enc{i}/mlp")
    if cfg.enc_layers:
        ln("enc/ln_f")

    for i in range(cfg.dec_layers):
        ln(f"dec{i}/ln1"); attn_block(f"dec{i}/self")
        ln(f"dec{i}/ln2"); attn_block(f"dec{i}/cross")
        ln(f"dec{i}/ln3"); mlp(f"dec{i}/mlp")
    if cfg.dec_layers:
        ln("dec/ln_f")

    for name, vocab in cfg.modalities:
        put(f"head/{name}/w", _tn(rng, d, vocab))
        put(f"head/{name}/b", np.zeros(vocab))

    return Params(cfg=cfg, values=p, step=0)


# ---------------------------------------------------------------------------
# Fixed encodings
# ---------------------------------------------------------------------------

_PE_CACHE: dict = {}


def spatial_encoding(H: int, W: int, d: int, dtype=np.float32) -> np.ndarray:
    """(H*W, d) fixed 2D sinusoidal table, cells in row-major order.

    Scaled to unit row norm so position and content embeddings start at
    comparable magnitude; the raw sin/cos table has norm sqrt(d/2), which
    swamps small learned embeddings at small d.
    """
    key = (H, W, d, np.dtype(dtype).name)
    hit = _PE_CACHE.get(key)
    if hit is not None:
        return hit
    half = d // 2
    n_pairs = half // 2
    w = np.power(10000.0, -2.0 * np.arange(n_pairs) / half)  # (n_pairs,)

    def axis_table(n):
        p = np.arange(n, dtype=np.float64)[:, None] * w  # (n, n_pairs)
        out = np.zeros((n, half))
        out[:, 0::2] = np.sin(p)
        out[:, 1::2] = np.cos(p)
        return out

    rows, cols = axis_table(H), axis_table(W)
    pe = np.zeros((H, W, d))
    pe[:, :, :half] = rows[:, None, :]
    pe[:, :, half:] = cols[None, :, :]
    pe *= np.sqrt(1.0 / (2 * n_pairs))
    pe = np.ascontiguousarray(pe.reshape(H * W, d), dtype=dtype)
    pe.setflags(write=False)
    _PE_CACHE[key] = pe
    return pe


# ---------------------------------------------------------------------------
# Token sets
# ---------------------------------------------------------------------------


@dataclass
class TokenSet:
    """Flattened view of a coordinate subset of one scene, canonical order
    (sorted rows, so each modality occupies one contiguous slice)."""

    coords: np.ndarray   # (n, 3) i64: modality_idx, t_idx, cell
    days: np.ndarray     # (n,) i64 acquisition day per token
    ids: np.ndarray      # (n,) i64 true token ids
    groups: list         # [(modality_idx, slice), ...] contiguous runs

    def __len__(self):
        return len(self.coords)


def build_token_set(scene: Scene, coords: np.ndarray) -> TokenSet:
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ConfigError("coordinates must be an (n, 3) array")
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    coords = coords[order]
    m, t, cell = coords[:, 0], coords[:, 1], coords[:, 2]
    days = scene.timestamps[t]
    r, c = cell // scene.W, cell % scene.W
    ids = np.empty(len(coords), dtype=np.int64)
    groups = []
    start = 0
    while start < len(coords):
        mi = int(m[start])
        stop = start
        while stop < len(coords) and m[stop] == mi:
            stop += 1
        name = scene.modalities[mi].name
        ids[start:stop] = scene.tokens[name][t[start:stop], r[start:stop],
                                             c[start:stop]]
        groups.append((mi, slice(start, stop)))
        start = stop
    return TokenSet(coords=coords, days=days, ids=ids, groups=groups)


def all_token_coords(scene: Scene) -> np.ndarray:
    rows = []
    for mi, spec in enumerate(scene.modalities):
        for t in range(scene.frames_of(spec)):
            for cell in range(scene.H * scene.W):
                rows.append((mi, t, cell))
    return np.array(rows, dtype=np.int64)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def _sched(cfg: ModelConfig):
    return rope.frequencies(cfg.head_dim, cfg.rope_base)


def check_scene_compatible(scene: Scene, cfg: ModelConfig) -> None:
    got = tuple((m.name, m.vocab_size) for m in scene.modalities)
    if got != cfg.modalities:
        raise ConfigError(
            f"scene modalities {got} do not match model config {cfg.modalities}")
    if scene.H > cfg.max_h or scene.W > cfg.max_w:
        raise ConfigError(
            f"scene grid {scene.H}x{scene.W} exceeds model bound "
            f"{cfg.max_h}x{cfg.max_w}")


def _split_heads(x, L, n_heads, hd):
    return nd.transpose(nd.reshape(x, (L, n_heads, hd)), (1, 0, 2))


def attention(q, k, v, days_q, days_k, sched, n_heads,
              additive_mask=None, use_rope=True):
    """Multi-head scaled dot-product attention with rotary time.

    q: (Lq, d); k, v: (Lk, d); days_*: integer day per token.  Per head,
    logits are <rotate(q, m), rotate(k, n)> / sqrt(head_dim); an optional
    additive mask (Lq, Lk) of {0, MASK_OFF} entries forbids pairs.
    """
    Lq, dm = q.shape
    Lk = k.shape[0]
    hd = dm // n_heads
    qh = _split_heads(q, Lq, n_heads, hd)
    kh = _split_heads(k, Lk, n_heads, hd)
    vh = _split_heads(v, Lk, n_heads, hd)
    if use_rope:
        qh = rope.rotate_tokens(qh, days_q, sched)
        kh = rope.rotate_tokens(kh, days_k, sched)
    logits = nd.scale(nd.matmul(qh, nd.transpose(kh, (0, 2, 1))), hd ** -0.5)
    if additive_mask is not None:
        mask = np.ascontiguousarray(additive_mask[None], dtype=logits.dtype)
        logits = nd.add(logits, nd.wrap(mask))
    att = nd.softmax(logits, axis=-1)
    out = nd.matmul(att, vh)
    return nd.reshape(nd.transpose(out, (1, 0, 2)), (Lq, dm))


def attention_weights(q, k, days_q, days_k, sched, n_heads,
                      additive_mask=None, use_rope=True) -> np.ndarray:
    """(n_heads, Lq, Lk) softmaxed weights; inspection/testing aid."""
    Lq, dm = q.shape
    hd = dm // n_heads
    qh = np.asarray(q.data if isinstance(q, nd.Tensor) else q)
    kh = np.asarray(k.data if isinstance(k, nd.Tensor) else k)
    qh = qh.reshape(Lq, n_heads, hd).transpose(1, 0, 2)
    kh = kh.reshape(-1, n_heads, hd).transpose(1, 0, 2)
    if use_rope:
        qh = rope.rotate_tokens(nd.wrap(qh.copy()), days_q, sched).data
        kh = rope.rotate_tokens(nd.wrap(kh.copy()), days_k, sched).data
    logits = qh @ kh.transpose(0, 2, 1) / np.sqrt(hd)
    if additive_mask is not None:
        logits = logits + additive_mask[None]
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def _proj(x, pt, prefix, w, b):
    return nd.add(nd.matmul(x, pt[f"{prefix}/{w}"]), pt[f"{prefix}/{b}"])


def _attn_sublayer(x, kv, pt, prefix, days_q, days_k, sched, cfg,
                   additive_mask=None, rotate=True):
    if kv is None:  # self-attention
        kv = x
    q = _proj(x, pt, prefix, "wq", "bq")
    k = _proj(kv, pt, prefix, "wk", "bk")
    v = _proj(kv, pt, prefix, "wv", "bv")
    a = attention(q, k, v, days_q, days_k, sched, cfg.n_heads,
                  additive_mask=additive_mask,
                  use_rope=cfg.use_rope and rotate)
    return _proj(a, pt, prefix, "wo", "bo")


def _mlp(x, pt, prefix):
    h = nd.gelu(nd.add(nd.matmul(x, pt[f"{prefix}/w1"]), pt[f"{prefix}/b1"]))
    return nd.add(nd.matmul(h, pt[f"{prefix}/w2"]), pt[f"{prefix}/b2"])


def _ln(x, pt, prefix):
    return nd.layer_norm(x, pt[f"{prefix}/g"], pt[f"{prefix}/b"])


def embed(token_set: TokenSet, pt: dict, cfg: ModelConfig, H: int, W: int):
    """(L, d_model) embeddings: token id + modality + spatial, no time."""
    parts = []
    for mi, sl in token_set.groups:
        name = cfg.modalities[mi][0]
        parts.append(nd.embedding_lookup(pt[f"embed/token/{name}"],
                                         token_set.ids[sl]))
    x = parts[0] if len(parts) == 1 else nd.concat(parts, axis=0)
    x = nd.add(x, nd.embedding_lookup(pt["embed/modality"],
                                      token_set.coords[:, 0]))
    pe = spatial_encoding(H, W, cfg.d_model, cfg.np_dtype)
    x = nd.add(x, nd.wrap(pe[token_set.coords[:, 2]]))
    return x


def check_taps(taps, enc_layers: int) -> tuple:
    """Validate 1-indexed encoder tap positions; returns them as a tuple."""
    taps = tuple(int(t) for t in taps)
    if not taps or list(taps) != sorted(set(taps)):
        raise ConfigError(f"tap layers must be strictly increasing, got {taps}")
    if taps[0] < 1 or taps[-1] > enc_layers:
        raise ConfigError(
            f"tap layers {taps} outside encoder depth 1..{enc_layers}")
    return taps


def encode(scene: Scene, coords: np.ndarray, pt: dict, cfg: ModelConfig,
           additive_mask=None, taps=None):
    """Latents for the given coordinates; (token_set, (L, d) Tensor).

    With `taps` (1-indexed block positions) the return gains a third
    element: {tap: Tensor} recorded at each tapped block's output.  The
    deepest possible tap is the encoder output itself, after the final
    normalization.
    """
    check_scene_compatible(scene, cfg)
    if taps is not None:
        taps = check_taps(taps, cfg.enc_layers)
    ts = build_token_set(scene, coords)
    return _encode_token_set(scene, ts, pt, cfg, additive_mask, taps)


def _encode_token_set(scene, ts, pt, cfg, additive_mask=None, taps=None):
    sched = _sched(cfg)
    x = embed(ts, pt, cfg, scene.H, scene.W)
    tapped = {}
    for i in range(cfg.enc_layers):
        h = _attn_sublayer(_ln(x, pt, f"enc{i}/ln1"), None, pt, f"enc{i}/attn",
                           ts.days, ts.days, sched, cfg,
                           additive_mask=additive_mask)
        x = nd.add(x, h)
        x = nd.add(x, _mlp(_ln(x, pt, f"enc{i}/ln2"), pt, f"enc{i}/mlp"))
        if i + 1 == cfg.enc_layers:
            x = _ln(x, pt, "enc/ln_f")
        if taps is not None and (i + 1) in taps:
            tapped[i + 1] = x
    if taps is None:
        return ts, x
    return ts, x, tapped


def decode(latents, latent_days: np.ndarray, target_set: TokenSet, pt: dict,
           cfg: ModelConfig, H: int, W: int):
    """Per-modality logits for pure positional target queries.

    Returns [(modality_idx, slice, logits Tensor), ...] in the target set's
    canonical order.
    """
    sched = _sched(cfg)
    x = nd.embedding_lookup(pt["embed/modality"], target_set.coords[:, 0])
    pe = spatial_encoding(H, W, cfg.d_model, cfg.np_dtype)
    x = nd.add(x, nd.wrap(pe[target_set.coords[:, 2]]))
    dq = target_set.days
    for i in range(cfg.dec_layers):
        h = _attn_sublayer(_ln(x, pt, f"dec{i}/ln1"), None, pt, f"dec{i}/self",
                           dq, dq, sched, cfg)
        x = nd.add(x, h)
        h = _attn_sublayer(_ln(x, pt, f"dec{i}/ln2"), latents, pt,
                           f"dec{i}/cross", dq, latent_days, sched, cfg,
                           rotate=cfg.rope_in_cross_attention)
        x = nd.add(x, h)
        x = nd.add(x, _mlp(_ln(x, pt, f"dec{i}/ln3"), pt, f"dec{i}/mlp"))
    if cfg.dec_layers:
        x = _ln(x, pt, "dec/ln_f")
    out = []
    for mi, sl in target_set.groups:
        name = cfg.modalities[mi][0]
        rows = nd.slice_(x, (sl,))
        logits = nd.add(nd.matmul(rows, pt[f"head/{name}/w"]),
                        pt[f"head/{name}/b"])
        out.append((mi, sl, logits))
    return out


def forward_loss(scene: Scene, plan: MaskPlan, cfg: ModelConfig, pt: dict):
    """Mean cross entropy over the plan's targets.

    Returns (loss Tensor, info dict with per-modality logits and ids).
    """
    enc_ts, latents = encode(scene, plan.input_tokens, pt, cfg)
    tgt_ts = build_token_set(scene, plan.target_tokens)
    heads = decode(latents, enc_ts.days, tgt_ts, pt, cfg, scene.H, scene.W)
    n_total = len(tgt_ts)
    loss = None
    info = {"groups": [], "n_targets": n_total}
    for mi, sl, logits in heads:
        ids = tgt_ts.ids[sl]
        ce = nd.cross_entropy_logits(logits, ids)
        term = nd.scale(ce, len(ids) / n_total)
        loss = term if loss is None else nd.add(loss, term)
        info["groups"].append((mi, logits, ids))
    return loss, info


def late_fusion_encode(scene: Scene, coords: np.ndarray, pt: dict,
                       cfg: ModelConfig, taps=None):
    """Per-frame latents: each acquisition day encoded independently.

    Equivalent to full encoding under an attention mask restricted to
    same-day pairs, but computed frame by frame so cost grows linearly with
    the number of frames.  Returns (token_set, (L, d) Tensor) with rows in
    the same canonical order as `encode`; with `taps`, also {tap: Tensor}
    in that same row order.
    """
    check_scene_compatible(scene, cfg)
    if taps is not None:
        taps = check_taps(taps, cfg.enc_layers)
    ts = build_token_set(scene, coords)
    days = np.unique(ts.days)
    if len(days) == 1:   # one acquisition day: both strategies coincide
        return _encode_token_set(scene, ts, pt, cfg, taps=taps)
    rows_out = []
    tap_rows = {}
    row_index = []
    for day in days:
        sel = np.flatnonzero(ts.days == day)
        if taps is None:
            _, lat = encode(scene, ts.coords[sel], pt, cfg)
        else:
            _, lat, tapped = encode(scene, ts.coords[sel], pt, cfg, taps=taps)
            for t, v in tapped.items():
                tap_rows.setdefault(t, []).append(v)
        rows_out.append(lat)
        row_index.append(sel)
    order = np.concatenate(row_index)
    inv = np.argsort(order, kind="stable")

    def merge(chunks):
        m = chunks[0] if len(chunks) == 1 else nd.concat(chunks, axis=0)
        return nd.gather(m, inv)

    if taps is None:
        return ts, merge(rows_out)
    return ts, merge(rows_out), {t: merge(v) for t, v in tap_rows.items()}


def same_day_mask(days: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(L, L) additive mask: 0 for same-day pairs, MASK_OFF otherwise."""
    eq = days[:, None] == days[None, :]
    return np.where(eq, 0.0, MASK_OFF).astype(dtype)


# ---------------------------------------------------------------------------
# Checkpoints (TFCK)
# ---------------------------------------------------------------------------

_DTYPE_CODES = {"float32": 0, "float64": 1}
_CODE_DTYPES = {0: "<f4", 1: "<f8"}


def save_checkpoint(path, params: Params) -> None:
    cfg_json = params.cfg.to_json().encode("utf-8")
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<HI", CKPT_VERSION, len(cfg_json))
    out += cfg_json
    out += struct.pack("<QI", params.step, len(params.values))
    for name in sorted(params.values):
        arr = params.values[name]
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", _DTYPE_CODES[arr.dtype.name], arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        le = "<f4" if arr.dtype == np.float32 else "<f8"
        out += np.ascontiguousarray(arr, dtype=le).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> Params:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a TFCK checkpoint")
    off = 4
    version, cfg_len = struct.unpack_from("<HI", data, off)
    off += 6
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = ModelConfig.from_json(data[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    step, n = struct.unpack_from("<QI", data, off)
    off += 12
    values = {}
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", data, off); off += 2
        name = data[off : off + nlen].decode("utf-8"); off += nlen
        code, ndim = struct.unpack_from("<BB", data, off); off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off); off += 4 * ndim
        if code not in _CODE_DTYPES:
            raise DataError(f"{path}: unknown dtype code {code}")
        dt = np.dtype(_CODE_DTYPES[code])
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = dt.itemsize * count
        if off + nbytes > len(data):
            raise DataError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off)
        values[name] = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
        off += nbytes
    if off != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return Params(cfg=cfg, values=values, step=int(step))
