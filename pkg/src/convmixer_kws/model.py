"""The conv/mixer keyword-spotting encoder.

Layout per block: a 2D conv lifts the (channel x time) map onto a depth axis,
a 2D depthwise-separable conv extracts along frequency, a pointwise conv
compresses back, a 1D depthwise-separable conv extracts along time, and an
MLP mixing layer exchanges information globally; the block output is
x + y1 + mixer(y2). Pre/post blocks are 1D depthwise-separable convs with
batch norm and swish. Head is a global average pool over time plus a linear
classifier.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass
class ModelConfig:
    n_blocks: int = 4
    channels: int = 64
    in_mels: int = 64
    n_frames: int = 98
    kernel_pre: int = 5
    kernel_block_1d: int = 9
    kernel_block_2d: tuple[int, int] = (3, 3)
    kernel_post: int = 9
    depth_channels: int = 16
    mixer_hidden_t: int = 64
    mixer_hidden_f: int = 64
    mixer_enabled: bool = True
    n_classes: int = 12

    def validate(self):
        ints = [
            self.n_blocks, self.channels, self.in_mels, self.n_frames,
            self.kernel_pre, self.kernel_block_1d, self.kernel_post,
            self.depth_channels, self.mixer_hidden_t, self.mixer_hidden_f,
            self.n_classes, *self.kernel_block_2d,
        ]
        if any(int(v) < 1 for v in ints):
            raise ValueError(f"all config extents must be >= 1: {self}")


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv:
    """Grouped same-padding convolution layer (1D or 2D by kernel rank)."""

    def __init__(self, name, rng, in_ch, out_ch, kernel, groups=1):
        kernel = (kernel,) if isinstance(kernel, int) else tuple(kernel)
        fan_in = (in_ch // groups) * int(np.prod(kernel))
        self.w = Parameter(name + ".w", _he_uniform(rng, (out_ch, in_ch // groups, *kernel), fan_in))
        self.b = Parameter(name + ".b", np.zeros(out_ch, dtype=np.float32))
        self.groups = groups

    def __call__(self, x):
        return ad.conv(x, self.w, self.b, groups=self.groups)

    def parameters(self):
        yield self.w
        yield self.b

    def macs(self, positions: int) -> int:
        out_ch, cg = self.w.data.shape[0], self.w.data.shape[1]
        kernel_volume = int(np.prod(self.w.data.shape[2:]))
        return positions * kernel_volume * cg * out_ch


class SeparableConv:
    """Depthwise conv followed by a pointwise conv (the DWS factorization)."""

    def __init__(self, name, rng, in_ch, out_ch, kernel, dims=1):
        one = 1 if dims == 1 else (1, 1)
        self.dw = Conv(name + ".dw", rng, in_ch, in_ch, kernel, groups=in_ch)
        self.pw = Conv(name + ".pw", rng, in_ch, out_ch, one)

    def __call__(self, x):
        return self.pw(self.dw(x))

    def parameters(self):
        yield from self.dw.parameters()
        yield from self.pw.parameters()

    def macs(self, positions: int) -> int:
        return self.dw.macs(positions) + self.pw.macs(positions)


class BatchNorm:
    def __init__(self, name, channels, momentum=0.1, eps=1e-5):
        self.gamma = Parameter(name + ".gamma", np.ones(channels, dtype=np.float32))
        self.beta = Parameter(name + ".beta", np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training):
        return ad.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=training, momentum=self.momentum, eps=self.eps,
        )

    def parameters(self):
        yield self.gamma
        yield self.beta


class LayerNorm:
    def __init__(self, name, extent, eps=1e-5):
        self.gamma = Parameter(name + ".gamma", np.ones(extent, dtype=np.float32))
        self.beta = Parameter(name + ".beta", np.zeros(extent, dtype=np.float32))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def parameters(self):
        yield self.gamma
        yield self.beta


class Linear:
    def __init__(self, name, rng, in_dim, out_dim):
        self.w = Parameter(name + ".w", _he_uniform(rng, (out_dim, in_dim), in_dim))
        self.b = Parameter(name + ".b", np.zeros(out_dim, dtype=np.float32))

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)

    def parameters(self):
        yield self.w
        yield self.b

    def macs(self, sites: int) -> int:
        out_dim, in_dim = self.w.data.shape
        return sites * in_dim * out_dim


class ConvBlock1d:
    """1D DWS + batch norm + swish (the pre/post block recipe)."""

    def __init__(self, name, rng, in_ch, out_ch, kernel):
        self.sep = SeparableConv(name + ".sep", rng, in_ch, out_ch, kernel, dims=1)
        self.bn = BatchNorm(name + ".bn", out_ch)

    def __call__(self, x, training):
        return ad.swish(self.bn(self.sep(x), training))

    def parameters(self):
        yield from self.sep.parameters()
        yield from self.bn.parameters()


class MixerLayer:
    """Two shared-weight MLP mixes with residuals: over time per frequency
    channel, then (after a transpose) over frequency per time step. Layer norm
    runs along the axis being mixed."""

    def __init__(self, name, rng, n_t, n_f, hidden_t, hidden_f):
        self.t_ln = LayerNorm(name + ".t_ln", n_t)
        self.t_fc1 = Linear(name + ".t_fc1", rng, n_t, hidden_t)
        self.t_fc2 = Linear(name + ".t_fc2", rng, hidden_t, n_t)
        self.f_ln = LayerNorm(name + ".f_ln", n_f)
        self.f_fc1 = Linear(name + ".f_fc1", rng, n_f, hidden_f)
        self.f_fc2 = Linear(name + ".f_fc2", rng, hidden_f, n_f)

    def __call__(self, x):
        # x: (B, T, F). Temporal mix works on (B, F, T) rows so the linear
        # algebra matches the frequency mix after a transpose.
        xt = ad.transpose_ft(x)
        h = self.t_fc2(ad.gelu(self.t_fc1(self.t_ln(xt))))
        u = ad.transpose_ft(ad.add(xt, h))
        h2 = self.f_fc2(ad.gelu(self.f_fc1(self.f_ln(u))))
        return ad.add(u, h2)

    def parameters(self):
        for layer in (self.t_ln, self.t_fc1, self.t_fc2, self.f_ln, self.f_fc1, self.f_fc2):
            yield from layer.parameters()

    def macs(self, n_t: int, n_f: int) -> int:
        return (
            self.t_fc1.macs(n_f) + self.t_fc2.macs(n_f)
            + self.f_fc1.macs(n_t) + self.f_fc2.macs(n_t)
        )


class ConvMixerBlock:
    def __init__(self, name, rng, cfg: ModelConfig):
        c, d = cfg.channels, cfg.depth_channels
        k2 = cfg.kernel_block_2d
        self.expand = Conv(name + ".expand", rng, 1, d, k2)
        self.f1 = SeparableConv(name + ".f1", rng, d, d, k2, dims=2)
        self.compress = Conv(name + ".compress", rng, d, 1, (1, 1))
        self.bn_freq = BatchNorm(name + ".bn_freq", c)
        self.f2 = SeparableConv(name + ".f2", rng, c, c, cfg.kernel_block_1d, dims=1)
        self.bn_temp = BatchNorm(name + ".bn_temp", c)
        self.mixer = (
            MixerLayer(name + ".mixer", rng, cfg.n_frames, c, cfg.mixer_hidden_t, cfg.mixer_hidden_f)
            if cfg.mixer_enabled
            else None
        )

    def __call__(self, x, training, trace=None):
        b, c, t = x.data.shape
        x4 = ad.reshape(x, (b, 1, c, t))
        z = ad.swish(self.f1(ad.swish(self.expand(x4))))
        y1 = ad.swish(self.bn_freq(ad.reshape(self.compress(z), (b, c, t)), training))
        y2 = ad.swish(self.bn_temp(self.f2(y1), training))
        if self.mixer is not None:
            f3 = ad.transpose_ft(self.mixer(ad.transpose_ft(y2)))
        else:
            f3 = y2
        if trace is not None:
            trace.append((y1.data.copy(), y2.data.copy()))
        return ad.add(ad.add(x, y1), f3)

    def parameters(self):
        for layer in (self.expand, self.f1, self.compress, self.bn_freq, self.f2, self.bn_temp):
            yield from layer.parameters()
        if self.mixer is not None:
            yield from self.mixer.parameters()


class ConvMixer:
    """Full encoder: pre block, N conv/mixer blocks, post block, classifier."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.pre = ConvBlock1d("pre", rng, cfg.in_mels, cfg.channels, cfg.kernel_pre)
        self.blocks = [
            ConvMixerBlock(f"blocks.{i}", rng, cfg) for i in range(cfg.n_blocks)
        ]
        self.post = ConvBlock1d("post", rng, cfg.channels, cfg.channels, cfg.kernel_post)
        self.head = Linear("head", rng, cfg.channels, cfg.n_classes)
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in model")

    def parameters(self):
        yield from self.pre.parameters()
        for blk in self.blocks:
            yield from blk.parameters()
        yield from self.post.parameters()
        yield from self.head.parameters()

    def batch_norms(self):
        yield "pre.bn", self.pre.bn
        for i, blk in enumerate(self.blocks):
            yield f"blocks.{i}.bn_freq", blk.bn_freq
            yield f"blocks.{i}.bn_temp", blk.bn_temp
        yield "post.bn", self.post.bn

    def forward(self, feats, training: bool = False, trace=None) -> Tensor:
        """Features (B, frames, mels) -> logits (B, n_classes)."""
        if not isinstance(feats, Tensor):
            feats = Tensor(np.asarray(feats, dtype=np.float32))
        if feats.data.ndim != 3 or feats.data.shape[1:] != (self.cfg.n_frames, self.cfg.in_mels):
            raise ValueError(
                f"expected features (B, {self.cfg.n_frames}, {self.cfg.in_mels}), got {feats.data.shape}"
            )
        x = ad.transpose_ft(feats)  # (B, mels, T): mel bins become channels
        x = self.pre(x, training)
        for blk in self.blocks:
            x = blk(x, training, trace=trace)
        x = self.post(x, training)
        pooled = ad.mean(x, axis=2)
        return self.head(pooled)


def build_model(cfg: ModelConfig, rng_or_seed=0) -> ConvMixer:
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else np.random.default_rng(rng_or_seed)
    return ConvMixer(cfg, rng)


def count_params(model: ConvMixer) -> int:
    """Total trainable scalars (weights, biases, BN/LN affine; no running stats)."""
    return int(sum(p.data.size for p in model.parameters()))


def mac_breakdown(model: ConvMixer) -> dict[str, int]:
    """Multiply-accumulates of one single-sample forward pass, per layer.

    Convolutions count out_positions * kernel_volume * (in/groups) * out;
    linears count in * out per application site; normalizations, activations
    and pooling are excluded.
    """
    cfg = model.cfg
    t, c = cfg.n_frames, cfg.channels
    pos1d = t
    pos2d = c * t
    out: dict[str, int] = {}
    out["pre.dw"] = model.pre.sep.dw.macs(pos1d)
    out["pre.pw"] = model.pre.sep.pw.macs(pos1d)
    for i, blk in enumerate(model.blocks):
        out[f"blocks.{i}.expand"] = blk.expand.macs(pos2d)
        out[f"blocks.{i}.f1.dw"] = blk.f1.dw.macs(pos2d)
        out[f"blocks.{i}.f1.pw"] = blk.f1.pw.macs(pos2d)
        out[f"blocks.{i}.compress"] = blk.compress.macs(pos2d)
        out[f"blocks.{i}.f2.dw"] = blk.f2.dw.macs(pos1d)
        out[f"blocks.{i}.f2.pw"] = blk.f2.pw.macs(pos1d)
        if blk.mixer is not None:
            out[f"blocks.{i}.mixer"] = blk.mixer.macs(t, c)
    out["post.dw"] = model.post.sep.dw.macs(pos1d)
    out["post.pw"] = model.post.sep.pw.macs(pos1d)
    out["head"] = model.head.macs(1)
    return out


def count_macs(model: ConvMixer, input_shape: tuple[int, int] | None = None) -> int:
    if input_shape is not None:
        expected = (model.cfg.n_frames, model.cfg.in_mels)
        if tuple(input_shape) != expected:
            raise ValueError(f"input_shape {input_shape} does not match model {expected}")
    return int(sum(mac_breakdown(model).values()))


# ---------------------------------------------------------------------------
# checkpoint format: magic 'CMKW', u32 version, u32 tensor count, then per
# tensor u16 name length + name, u8 rank, u32 extents, raw little-endian f32;
# finally one named 'config' entry holding the flat key=value text. All
# integers little-endian.

MAGIC = b"CMKW"
VERSION = 1


def _config_text(cfg: ModelConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(i) for i in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in kv:
            raise ValueError(f"checkpoint config missing field {f.name}")
        raw = kv[f.name]
        if f.name == "kernel_block_2d":
            kwargs[f.name] = tuple(int(p) for p in raw.split(","))
        elif f.name == "mixer_enabled":
            kwargs[f.name] = raw.lower() in ("true", "1", "yes")
        else:
            kwargs[f.name] = int(raw)
    return ModelConfig(**kwargs)


def _named_tensors(model: ConvMixer) -> list[tuple[str, np.ndarray]]:
    out = [(p.name, p.data) for p in model.parameters()]
    for name, bn in model.batch_norms():
        out.append((name + ".running_mean", bn.running_mean))
        out.append((name + ".running_var", bn.running_var))
    return out


def save_checkpoint(model: ConvMixer, path):
    buf = io.BytesIO()
    tensors = _named_tensors(model)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    text = _config_text(model.cfg).encode("utf-8")
    buf.write(struct.pack("<H", len(b"config")))
    buf.write(b"config")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> ConvMixer:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        if _read_exact(fh, nlen) != b"config":
            raise ValueError("checkpoint missing config entry")
        (tlen,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg = _config_from_text(_read_exact(fh, tlen).decode("utf-8"))

    model = build_model(cfg, np.random.default_rng(0))
    for p in model.parameters():
        if p.name not in tensors:
            raise ValueError(f"checkpoint missing tensor {p.name}")
        if tensors[p.name].shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {p.name}: {tensors[p.name].shape} vs {p.data.shape}"
            )
        p.data = np.ascontiguousarray(tensors[p.name])
    for name, bn in model.batch_norms():
        bn.running_mean = np.ascontiguousarray(tensors[name + ".running_mean"])
        bn.running_var = np.ascontiguousarray(tensors[name + ".running_var"])
    return model


def copy_weights(src: ConvMixer, dst: ConvMixer):
    """Copy parameters and running stats between models of the same config."""
    dst_params = {p.name: p for p in dst.parameters()}
    for p in src.parameters():
        dst_params[p.name].data = p.data.copy()
    dst_bns = dict(dst.batch_norms())
    for name, bn in src.batch_norms():
        dst_bns[name].running_mean = bn.running_mean.copy()
        dst_bns[name].running_var = bn.running_var.copy()
