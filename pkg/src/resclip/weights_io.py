"""Reader/writer for the "RESCLIP1" named-tensor container.

Byte layout (the contract any exporter must reproduce bit-exactly):

    bytes 0..8    magic b"RESCLIP1"
    bytes 8..16   little-endian uint64 header length N
    bytes 16..16+N  UTF-8 JSON object: the reserved key "meta" holds model
                  constants; every other key is a tensor name mapping to
                  {"dtype": "f32", "shape": [...], "offset": <abs byte off>}
    payload       raw little-endian float32, each tensor 64-byte aligned

Weight bundles carry the full set of ViT parameters plus preprocessing
constants in meta (patch_size, layers, heads, dim, text_dim, mean, std,
eps, act). Class-embedding containers carry a single "embeds" tensor with
the class names in meta.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"RESCLIP1"
ALIGN = 64

_LAYER_TENSORS = (
    "ln1.gamma", "ln1.beta",
    "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
    "ln2.gamma", "ln2.beta",
    "mlp_fc.W", "mlp_fc.b", "mlp_proj.W", "mlp_proj.b",
)


@dataclass
class ModelMeta:
    patch_size: int
    layers: int
    heads: int
    dim: int
    text_dim: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    eps: float = 1e-5
    act: str = "quick_gelu"


@dataclass
class LayerParams:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray


@dataclass
class WeightsBundle:
    """All ViT parameters, immutable after load and shareable across threads.

    Projection matrices are stored input-major: a projection is applied as
    ``x @ W + b``. ``patch_proj`` rows are ordered channel-major then
    row-major over the patch (c, y, x).
    """

    patch_proj: np.ndarray
    cls_token: np.ndarray
    pos_embed: np.ndarray
    pre_ln_gamma: np.ndarray
    pre_ln_beta: np.ndarray
    layers: list[LayerParams]
    final_ln_gamma: np.ndarray
    final_ln_beta: np.ndarray
    visual_proj: np.ndarray
    meta: ModelMeta

    @property
    def head_dim(self) -> int:
        return self.meta.dim // self.meta.heads


@dataclass
class ClassEmbeddingMatrix:
    """Unit-norm text embeddings, one row per class."""

    embeds: np.ndarray
    names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.embeds.shape[0]


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Parse a container file into (tensors, meta). Read-only and idempotent."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a RESCLIP1 container (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise FormatError(f"{path}: truncated header ({header_len} bytes declared)")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed header: {e}") from e
    if not isinstance(header, dict) or "meta" not in header:
        raise FormatError(f"{path}: header missing 'meta' object")
    meta = header.pop("meta")

    tensors: dict[str, np.ndarray] = {}
    for name, entry in header.items():
        try:
            dtype, shape, offset = entry["dtype"], entry["shape"], entry["offset"]
        except (TypeError, KeyError) as e:
            raise FormatError(f"{path}: bad entry for tensor '{name}'") from e
        if dtype != "f32":
            raise FormatError(f"{path}: tensor '{name}' has unsupported dtype '{dtype}'")
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if offset < 0 or end > len(blob):
            raise FormatError(f"{path}: tensor '{name}' extends past end of file")
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tensors[name] = flat.reshape(shape).astype(np.float32)
    return tensors, meta


def write_container(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write tensors + meta in the container layout described above."""
    arrays = {name: np.ascontiguousarray(t, dtype="<f4") for name, t in tensors.items()}

    def layout(payload_start: int):
        header: dict = {"meta": meta}
        offset = payload_start
        for name, arr in arrays.items():
            offset = (offset + ALIGN - 1) // ALIGN * ALIGN
            header[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
            offset += arr.nbytes
        return json.dumps(header).encode("utf-8"), offset

    # Offsets appear inside the header, so iterate until the header size is stable.
    payload_start = ALIGN
    for _ in range(8):
        blob, _total = layout(payload_start)
        needed = (16 + len(blob) + ALIGN - 1) // ALIGN * ALIGN
        if needed == payload_start:
            break
        payload_start = needed
    header_bytes, total = layout(payload_start)

    buf = bytearray(total)
    buf[:8] = MAGIC
    buf[8:16] = struct.pack("<Q", len(header_bytes))
    buf[16 : 16 + len(header_bytes)] = header_bytes
    header = json.loads(header_bytes)
    for name, arr in arrays.items():
        off = header[name]["offset"]
        buf[off : off + arr.nbytes] = arr.tobytes()
    with open(path, "wb") as f:
        f.write(buf)


def _require(tensors: dict[str, np.ndarray], name: str, shape: tuple, path) -> np.ndarray:
    if name not in tensors:
        raise ValidationError(f"{path}: missing tensor '{name}'")
    t = tensors[name]
    if tuple(t.shape) != shape:
        raise ValidationError(
            f"{path}: tensor '{name}' has shape {tuple(t.shape)}, expected {shape}"
        )
    return t


def load_weights(path) -> WeightsBundle:
    """Load and shape-validate a weight bundle against its meta block."""
    tensors, raw_meta = read_container(path)
    try:
        meta = ModelMeta(
            patch_size=int(raw_meta["patch_size"]),
            layers=int(raw_meta["layers"]),
            heads=int(raw_meta["heads"]),
            dim=int(raw_meta["dim"]),
            text_dim=int(raw_meta["text_dim"]),
            mean=tuple(float(v) for v in raw_meta["mean"]),
            std=tuple(float(v) for v in raw_meta["std"]),
            eps=float(raw_meta.get("eps", 1e-5)),
            act=str(raw_meta.get("act", "quick_gelu")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{path}: bad meta block: {e}") from e

    p, d, dt = meta.patch_size, meta.dim, meta.text_dim
    if meta.layers < 1 or meta.heads < 1:
        raise ValidationError(f"{path}: meta declares layers={meta.layers}, heads={meta.heads}")
    if d % meta.heads != 0:
        raise ValidationError(f"{path}: dim {d} not divisible by heads {meta.heads}")
    if len(meta.mean) != 3 or len(meta.std) != 3:
        raise ValidationError(f"{path}: mean/std must have 3 channels")
    if meta.act not in ("gelu", "quick_gelu"):
        raise ValidationError(f"{path}: unknown activation '{meta.act}'")

    patch_proj = _require(tensors, "patch_proj", (3 * p * p, d), path)
    cls_token = _require(tensors, "cls_token", (d,), path)
    if "pos_embed" not in tensors:
        raise ValidationError(f"{path}: missing tensor 'pos_embed'")
    pos_embed = tensors["pos_embed"]
    if pos_embed.ndim != 2 or pos_embed.shape[0] < 2 or pos_embed.shape[1] != d:
        raise ValidationError(
            f"{path}: tensor 'pos_embed' has shape {tuple(pos_embed.shape)}, "
            f"expected (1 + h0*w0, {d})"
        )

    layers = []
    for i in range(meta.layers):
        pre = f"layer{i}."
        vec = lambda n: _require(tensors, pre + n, (d,), path)  # noqa: E731
        mat = lambda n: _require(tensors, pre + n, (d, d), path)  # noqa: E731
        fc_name = pre + "mlp_fc.W"
        if fc_name not in tensors:
            raise ValidationError(f"{path}: missing tensor '{fc_name}'")
        hidden = tensors[fc_name].shape[-1] if tensors[fc_name].ndim == 2 else 0
        layers.append(
            LayerParams(
                ln1_gamma=vec("ln1.gamma"), ln1_beta=vec("ln1.beta"),
                wq=mat("Wq"), bq=vec("bq"),
                wk=mat("Wk"), bk=vec("bk"),
                wv=mat("Wv"), bv=vec("bv"),
                wo=mat("Wo"), bo=vec("bo"),
                ln2_gamma=vec("ln2.gamma"), ln2_beta=vec("ln2.beta"),
                fc_w=_require(tensors, fc_name, (d, hidden), path),
                fc_b=_require(tensors, pre + "mlp_fc.b", (hidden,), path),
                proj_w=_require(tensors, pre + "mlp_proj.W", (hidden, d), path),
                proj_b=_require(tensors, pre + "mlp_proj.b", (d,), path),
            )
        )

    return WeightsBundle(
        patch_proj=patch_proj,
        cls_token=cls_token,
        pos_embed=pos_embed,
        pre_ln_gamma=_require(tensors, "pre_ln.gamma", (d,), path),
        pre_ln_beta=_require(tensors, "pre_ln.beta", (d,), path),
        layers=layers,
        final_ln_gamma=_require(tensors, "final_ln.gamma", (d,), path),
        final_ln_beta=_require(tensors, "final_ln.beta", (d,), path),
        visual_proj=_require(tensors, "visual_proj", (d, dt), path),
        meta=meta,
    )


def load_class_embeddings(path) -> ClassEmbeddingMatrix:
    """Load class-text embeddings; rows are re-normalized to unit L2."""
    tensors, meta = read_container(path)
    if "embeds" not in tensors:
        raise ValidationError(f"{path}: missing tensor 'embeds'")
    embeds = tensors["embeds"]
    if embeds.ndim != 2 or embeds.shape[0] < 1:
        raise ValidationError(f"{path}: 'embeds' must be a non-empty C x d matrix, got {tuple(embeds.shape)}")
    if not np.isfinite(embeds).all():
        raise ValidationError(f"{path}: 'embeds' contains non-finite values")
    norms = np.linalg.norm(embeds, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError(f"{path}: 'embeds' contains a zero-norm row")
    names = list(meta.get("names", []))
    if not names:
        names = [f"class_{i}" for i in range(embeds.shape[0])]
    if len(names) != embeds.shape[0]:
        raise ValidationError(
            f"{path}: {len(names)} class names for {embeds.shape[0]} embedding rows"
        )
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: class names are not unique")
    return ClassEmbeddingMatrix(embeds=(embeds / norms).astype(np.float32), names=names)
