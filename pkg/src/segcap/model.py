"""Two-stream encoder (text + video) with per-layer cross-modal attention
and a text decoder that attends over both encoder outputs.

Blocks are pre-norm: every sublayer reads a layer-normalized copy of its
input and adds its output back onto the residual stream, with a final
normalization after the last layer. Cross-modal attention takes queries
from one stream and keys/values from the other; it is skipped entirely
when the other stream is absent, so a multimodal model run without video
is exactly a text-only transformer over the same text weights.

Per-example gates multiply sublayer outputs (including their bias) by 0 or
1, which is how empty video rows in a mixed batch and decoder-side text
hiding are kept exact: a gated-off sublayer leaves the residual untouched
and contributes no gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .bpe import STYLE_ASR
from .errors import CheckpointError, ContractError, ShapeError
from .rng import rng_for

ARCH_NAMES = ("E2D2", "E2D6", "E2vidD2", "E2vidD6")


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    heads: int = 8
    text_layers: int = 2
    video_layers: int = 2
    decoder_layers: int = 6
    ffw_dim: int = 0  # 0 -> 4 * embed_dim
    max_text_positions: int = 241
    max_video_positions: int = 40
    dropout: float = 0.1
    video_feature_dim: int = 128
    multimodal: bool = True

    def __post_init__(self):
        if self.ffw_dim == 0:
            self.ffw_dim = 4 * self.embed_dim
        if self.embed_dim % self.heads != 0:
            raise ContractError("embed_dim must be divisible by heads")
        if min(self.text_layers, self.video_layers, self.decoder_layers) < 1:
            raise ContractError("layer counts must be >= 1")
        if self.multimodal and self.video_layers != self.text_layers:
            raise ContractError("cross-modal attention needs equal encoder depths")

    @property
    def arch(self) -> str:
        stem = "E2vid" if self.multimodal else "E2"
        return f"{stem}D{self.decoder_layers}"

    @classmethod
    def from_arch(cls, arch: str, vocab_size: int, **overrides) -> "ModelConfig":
        if arch not in ARCH_NAMES:
            raise ContractError(f"unknown architecture {arch!r}; expected one of {ARCH_NAMES}")
        return cls(vocab_size=vocab_size,
                   multimodal="vid" in arch,
                   decoder_layers=int(arch[-1]),
                   **overrides)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for name in ("vocab_size", "embed_dim", "heads", "text_layers", "video_layers",
                     "decoder_layers", "ffw_dim", "max_text_positions",
                     "max_video_positions", "dropout", "video_feature_dim", "multimodal"):
            out[f"model.{name}"] = str(getattr(self, name))
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        def get(name, conv):
            key = f"model.{name}"
            if key not in kv:
                raise CheckpointError(f"checkpoint config missing {key}")
            return conv(kv[key])

        return cls(
            vocab_size=get("vocab_size", int),
            embed_dim=get("embed_dim", int),
            heads=get("heads", int),
            text_layers=get("text_layers", int),
            video_layers=get("video_layers", int),
            decoder_layers=get("decoder_layers", int),
            ffw_dim=get("ffw_dim", int),
            max_text_positions=get("max_text_positions", int),
            max_video_positions=get("max_video_positions", int),
            dropout=get("dropout", float),
            video_feature_dim=get("video_feature_dim", int),
            multimodal=get("multimodal", lambda s: s == "True"),
        )


@dataclass
class Ctx:
    """Forward-pass context: train mode enables dropout fed by `rng`."""

    train: bool = False
    rng: np.random.Generator | None = None


EVAL = Ctx()


@dataclass
class EncoderOutput:
    text_states: T.Tensor | None
    video_states: T.Tensor | None
    text_mask: np.ndarray | None
    video_mask: np.ndarray | None


# ---------------------------------------------------------------------------
# parameters


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]


def parameter_names(cfg: ModelConfig) -> list[str]:
    """Every tensor name the architecture owns, in creation order."""
    names = ["embed.token", "embed.pos_text", "embed.style"]
    if cfg.multimodal:
        names += ["embed.pos_video", "vproj.w1", "vproj.b1", "vproj.w2", "vproj.b2",
                  "vproj.ng", "vproj.nb"]
    for stream, layers in (("tenc", cfg.text_layers),
                           ("venc", cfg.video_layers if cfg.multimodal else 0)):
        for i in range(layers):
            p = f"{stream}.{i}"
            names += [f"{p}.sn.g", f"{p}.sn.b"] + _attn_names(f"{p}.self")
            if cfg.multimodal:
                names += [f"{p}.xn.g", f"{p}.xn.b", f"{p}.xs.g", f"{p}.xs.b"]
                names += _attn_names(f"{p}.cross")
            names += [f"{p}.fn.g", f"{p}.fn.b", f"{p}.ff.w1", f"{p}.ff.b1",
                      f"{p}.ff.w2", f"{p}.ff.b2"]
        if layers:
            names += [f"{stream}.norm.g", f"{stream}.norm.b"]
    for i in range(cfg.decoder_layers):
        p = f"dec.{i}"
        names += [f"{p}.sn.g", f"{p}.sn.b"] + _attn_names(f"{p}.self")
        names += [f"{p}.tn.g", f"{p}.tn.b"] + _attn_names(f"{p}.xtext")
        if cfg.multimodal:
            names += [f"{p}.vn.g", f"{p}.vn.b"] + _attn_names(f"{p}.xvid")
        names += [f"{p}.fn.g", f"{p}.fn.b", f"{p}.ff.w1", f"{p}.ff.b1",
                  f"{p}.ff.w2", f"{p}.ff.b2"]
    names += ["dec.norm.g", "dec.norm.b"]
    if cfg.multimodal:
        for task in ("align", "order"):
            names += [f"head.{task}.w1", f"head.{task}.b1",
                      f"head.{task}.w2", f"head.{task}.b2"]
    return names


def parameter_shape(name: str, cfg: ModelConfig) -> tuple[int, ...]:
    d, f = cfg.embed_dim, cfg.ffw_dim
    leaf = name.rsplit(".", 1)[-1]
    if name == "embed.token":
        return (cfg.vocab_size, d)
    if name == "embed.pos_text":
        return (cfg.max_text_positions, d)
    if name == "embed.pos_video":
        return (cfg.max_video_positions, d)
    if name == "embed.style":
        return (2, d)
    if name.startswith("vproj."):
        return {"w1": (cfg.video_feature_dim, d), "b1": (d,), "w2": (d, d),
                "b2": (d,), "ng": (d,), "nb": (d,)}[leaf]
    if name.startswith("head."):
        return {"w1": (d, d), "b1": (d,), "w2": (d, 1), "b2": (1,)}[leaf]
    if leaf in ("g", "b") and name.split(".")[-2] in ("sn", "xn", "xs", "tn", "vn", "fn", "norm"):
        return (d,)
    if leaf in ("wq", "wk", "wv", "wo"):
        return (d, d)
    if leaf in ("bq", "bk", "bv", "bo"):
        return (d,)
    if leaf == "w1":
        return (d, f)
    if leaf == "b1":
        return (f,)
    if leaf == "w2":
        return (f, d)
    if leaf == "b2":
        return (d,)
    raise ContractError(f"no shape rule for parameter {name!r}")


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, T.Tensor]:
    """Fresh weights: normal(0, 0.02) for embeddings and affine maps, zeros
    for biases, ones for norm gains."""
    params: dict[str, T.Tensor] = {}
    for name in parameter_names(cfg):
        shape = parameter_shape(name, cfg)
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g" or leaf == "ng":
            data = np.ones(shape)
        elif leaf.startswith("b") or leaf == "nb":
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        params[name] = T.parameter(data, dtype=dtype)
    return params


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, T.Tensor]

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "Model":
        return cls(config=config, params=init_params(config, rng_for(seed, "init"), dtype))

    @property
    def dtype(self):
        return self.params["embed.token"].dtype


# ---------------------------------------------------------------------------
# forward pieces


def _norm(params, prefix, x):
    return T.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _attention(params, prefix, q_in, kv_in, bias, cfg: ModelConfig, ctx: Ctx,
               gate: np.ndarray | None = None):
    """Multi-head attention sublayer. `bias` is an additive numpy array
    broadcastable to [B, 1, Lq, Lk]; `gate` is [B, 1, 1] and multiplies the
    final output (bias included)."""
    d, h = cfg.embed_dim, cfg.heads
    dh = d // h
    b_, lq = q_in.data.shape[0], q_in.data.shape[1]
    lk = kv_in.data.shape[1]

    def heads_of(x, length):
        x = T.reshape(x, (b_, length, h, dh))
        return T.transpose(x, (0, 2, 1, 3))

    q = heads_of(T.matmul(q_in, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"], lq)
    k = heads_of(T.matmul(kv_in, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"], lk)
    v = heads_of(T.matmul(kv_in, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"], lk)
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if bias is not None:
        scores = scores + T.constant(bias.astype(q_in.data.dtype))
    weights = T.softmax(scores, axis=-1)
    weights = T.dropout(weights, cfg.dropout, ctx.rng, ctx.train)
    mixed = T.matmul(weights, v)
    mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b_, lq, d))
    out = T.matmul(mixed, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]
    out = T.dropout(out, cfg.dropout, ctx.rng, ctx.train)
    if gate is not None:
        out = T.mul(out, T.constant(gate.astype(q_in.data.dtype)))
    return out


def _feed_forward(params, prefix, x, cfg: ModelConfig, ctx: Ctx):
    h = T.gelu(T.matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    out = T.matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]
    return T.dropout(out, cfg.dropout, ctx.rng, ctx.train)


def _key_bias(mask: np.ndarray | None, dtype) -> np.ndarray | None:
    if mask is None:
        return None
    return T.attention_bias(mask, dtype)[:, None, None, :]


def _causal_bias(length: int, dtype) -> np.ndarray:
    keep = np.tril(np.ones((length, length), dtype=bool))
    return T.attention_bias(keep, dtype)[None, None, :, :]


def _visibility_gate(mask: np.ndarray | None) -> np.ndarray | None:
    """[B,1,1] gate that is 0 for rows whose source has no visible key."""
    if mask is None:
        return None
    return mask.any(axis=1).astype(np.float64)[:, None, None]


def embed_text(params, cfg: ModelConfig, ctx: Ctx, ids: np.ndarray, style: int,
               positions: np.ndarray | None = None) -> T.Tensor:
    """Sum of token, positional and style embeddings for one text stream."""
    ids = np.asarray(ids)
    if ids.shape[-1] > cfg.max_text_positions:
        raise ContractError(
            f"text length {ids.shape[-1]} exceeds {cfg.max_text_positions} positions"
        )
    if positions is None:
        positions = np.broadcast_to(np.arange(ids.shape[-1]), ids.shape)
    if positions.size and positions.max() >= cfg.max_text_positions:
        raise ContractError("position index outside the learned positional table")
    out = T.rows(params["embed.token"], ids)
    out = out + T.rows(params["embed.pos_text"], positions)
    out = out + T.rows(params["embed.style"], np.full(ids.shape, style))
    return T.dropout(out, cfg.dropout, ctx.rng, ctx.train)


def project_video(params, cfg: ModelConfig, ctx: Ctx, frames: np.ndarray) -> T.Tensor:
    """Frame features -> embedding space: affine, GeLU, affine, layer norm,
    plus the learned video positional embedding."""
    frames = np.asarray(frames)
    if frames.shape[-1] != cfg.video_feature_dim:
        raise ShapeError(
            f"frame feature dim {frames.shape[-1]} != configured {cfg.video_feature_dim}"
        )
    lv = frames.shape[1]
    if lv > cfg.max_video_positions:
        raise ContractError(f"{lv} frames exceed {cfg.max_video_positions} positions")
    x = T.constant(frames.astype(params["vproj.w1"].data.dtype))
    h = T.gelu(T.matmul(x, params["vproj.w1"]) + params["vproj.b1"])
    h = T.matmul(h, params["vproj.w2"]) + params["vproj.b2"]
    h = T.layer_norm(h, params["vproj.ng"], params["vproj.nb"])
    pos = np.broadcast_to(np.arange(lv), frames.shape[:2])
    out = h + T.rows(params["embed.pos_video"], pos)
    return T.dropout(out, cfg.dropout, ctx.rng, ctx.train)


def encode(params, cfg: ModelConfig, ctx: Ctx,
           text_ids: np.ndarray | None = None, style: int = STYLE_ASR,
           text_mask: np.ndarray | None = None,
           frames: np.ndarray | None = None,
           video_mask: np.ndarray | None = None,
           text_positions: np.ndarray | None = None) -> EncoderOutput:
    """Run both encoder streams with per-layer cross-modal attention.

    Either stream may be absent; zero-width video counts as absent. Padded
    positions are excluded from attention everywhere via the masks.
    """
    has_text = text_ids is not None
    has_video = frames is not None and frames.shape[1] > 0 and cfg.multimodal
    if frames is not None and frames.shape[1] > 0 and not cfg.multimodal:
        raise ContractError("text-only model cannot encode video frames")
    if not has_text and not has_video:
        raise ContractError("encode needs at least one input stream")

    t = embed_text(params, cfg, ctx, text_ids, style, text_positions) if has_text else None
    v = project_video(params, cfg, ctx, frames) if has_video else None
    dtype = (t if t is not None else v).data.dtype
    t_bias = _key_bias(text_mask, dtype) if has_text else None
    v_bias = _key_bias(video_mask, dtype) if has_video else None
    t_gate = _visibility_gate(text_mask) if has_text else None
    v_gate = _visibility_gate(video_mask) if has_video else None

    for i in range(cfg.text_layers):
        if t is not None:
            tn = _norm(params, f"tenc.{i}.sn", t)
            t = t + _attention(params, f"tenc.{i}.self", tn, tn, t_bias, cfg, ctx)
        if v is not None:
            vn = _norm(params, f"venc.{i}.sn", v)
            v = v + _attention(params, f"venc.{i}.self", vn, vn, v_bias, cfg, ctx)
        if t is not None and v is not None:
            # both cross directions read the same post-self snapshot
            t_snap, v_snap = t, v
            t = t + _attention(params, f"tenc.{i}.cross",
                               _norm(params, f"tenc.{i}.xn", t_snap),
                               _norm(params, f"tenc.{i}.xs", v_snap),
                               v_bias, cfg, ctx, gate=v_gate)
            v = v + _attention(params, f"venc.{i}.cross",
                               _norm(params, f"venc.{i}.xn", v_snap),
                               _norm(params, f"venc.{i}.xs", t_snap),
                               t_bias, cfg, ctx, gate=t_gate)
        if t is not None:
            t = t + _feed_forward(params, f"tenc.{i}.ff", _norm(params, f"tenc.{i}.fn", t), cfg, ctx)
        if v is not None:
            v = v + _feed_forward(params, f"venc.{i}.ff", _norm(params, f"venc.{i}.fn", v), cfg, ctx)

    if t is not None:
        t = _norm(params, "tenc.norm", t)
    if v is not None:
        v = _norm(params, "venc.norm", v)
    return EncoderOutput(text_states=t, video_states=v,
                         text_mask=text_mask if has_text else None,
                         video_mask=video_mask if has_video else None)


def decode_forward(params, cfg: ModelConfig, ctx: Ctx, dec_ids: np.ndarray,
                   style: int, enc: EncoderOutput,
                   positions: np.ndarray | None = None,
                   text_gate: np.ndarray | None = None) -> T.Tensor:
    """Causal decoder over the encoder outputs; returns logits [B, L, V].

    `text_gate` is an optional per-example 0/1 vector that hides the text
    encoder output from the decoder (output stays defined through the video
    route). Logits share weights with the token embedding table.
    """
    dec_ids = np.asarray(dec_ids)
    b_, length = dec_ids.shape
    h = embed_text(params, cfg, ctx, dec_ids, style, positions)
    dtype = h.data.dtype
    causal = _causal_bias(length, dtype)
    t_bias = _key_bias(enc.text_mask, dtype) if enc.text_states is not None else None
    v_bias = _key_bias(enc.video_mask, dtype) if enc.video_states is not None else None
    t_gate = _visibility_gate(enc.text_mask) if enc.text_states is not None else None
    if text_gate is not None and t_gate is not None:
        t_gate = t_gate * text_gate.astype(np.float64).reshape(-1, 1, 1)
    v_gate = _visibility_gate(enc.video_mask) if enc.video_states is not None else None

    for i in range(cfg.decoder_layers):
        hn = _norm(params, f"dec.{i}.sn", h)
        h = h + _attention(params, f"dec.{i}.self", hn, hn, causal, cfg, ctx)
        if enc.text_states is not None:
            h = h + _attention(params, f"dec.{i}.xtext",
                               _norm(params, f"dec.{i}.tn", h), enc.text_states,
                               t_bias, cfg, ctx, gate=t_gate)
        if enc.video_states is not None:
            h = h + _attention(params, f"dec.{i}.xvid",
                               _norm(params, f"dec.{i}.vn", h), enc.video_states,
                               v_bias, cfg, ctx, gate=v_gate)
        h = h + _feed_forward(params, f"dec.{i}.ff", _norm(params, f"dec.{i}.fn", h), cfg, ctx)

    h = _norm(params, "dec.norm", h)
    return T.matmul(h, T.transpose(params["embed.token"], (1, 0)))


def cls_logits(task: str, enc: EncoderOutput, params, cfg: ModelConfig,
               ctx: Ctx) -> T.Tensor:
    """Raw binary logit [B] from the CLS position of the text encoder."""
    if task not in ("align", "order"):
        raise ContractError(f"unknown classification task {task!r}")
    if f"head.{task}.w1" not in params:
        raise ContractError("this model has no classification heads (text-only)")
    if enc.text_states is None:
        raise ContractError("classification heads need the text stream (CLS position)")
    h0 = T.reshape(T.narrow(enc.text_states, 1, 0, 1),
                   (enc.text_states.data.shape[0], cfg.embed_dim))
    hidden = T.gelu(T.matmul(h0, params[f"head.{task}.w1"]) + params[f"head.{task}.b1"])
    z = T.matmul(hidden, params[f"head.{task}.w2"]) + params[f"head.{task}.b2"]
    return T.reshape(z, (z.data.shape[0],))


def cls_predict(task: str, enc: EncoderOutput, params, cfg: ModelConfig,
                ctx: Ctx = EVAL) -> T.Tensor:
    """Probability in (0,1) for the binary task read off the CLS state."""
    return T.sigmoid(cls_logits(task, enc, params, cfg, ctx))
