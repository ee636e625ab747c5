"""Reference implementations used as test oracles.

Everything in this module is written straight from the documented
contracts, in the most literal way possible: explicit loops, BFS walks,
float64 accumulation. Nothing here imports the package under test. Slow
on purpose; tests keep the inputs small.
"""

from __future__ import annotations

import json
import math
import struct
from collections import deque

import numpy as np


# ---------------------------------------------------------------- numerics


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_rows_ref(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    flat = s.reshape(-1, s.shape[-1])
    out = np.zeros_like(flat)
    for i, row in enumerate(flat):
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out.reshape(s.shape)


def layer_norm_ref(x: np.ndarray, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1, x.shape[-1])
    o = out.reshape(-1, x.shape[-1])
    for i, row in enumerate(flat):
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        o[i] = (row - mu) / math.sqrt(var + eps) * np.asarray(gamma, np.float64) + np.asarray(beta, np.float64)
    return out


def gelu_ref(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def quick_gelu_ref(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.vectorize(lambda v: v / (1.0 + math.exp(-1.702 * v)))(x)


def bilinear_ref(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling with border clamping, per pixel."""
    grid = np.asarray(grid, dtype=np.float64)
    squeeze = grid.ndim == 2
    if squeeze:
        grid = grid[:, :, None]
    in_h, in_w, c = grid.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
            bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out[:, :, 0] if squeeze else out


def cosine_logits_ref(features: np.ndarray, embeds: np.ndarray) -> np.ndarray:
    """Cosine similarity per row pair; zero-norm feature rows score -1."""
    features = np.asarray(features, dtype=np.float64)
    embeds = np.asarray(embeds, dtype=np.float64)
    out = np.zeros((features.shape[0], embeds.shape[0]))
    for i, f in enumerate(features):
        fn = math.sqrt((f * f).sum())
        for j, e in enumerate(embeds):
            en = math.sqrt((e * e).sum())
            out[i, j] = -1.0 if fn == 0 else float(f @ e) / (fn * en)
    return out


# ---------------------------------------------------- feedback-matrix oracle


def same_class_row_ref(m: np.ndarray, i: int) -> np.ndarray:
    """Indicator over flattened patches: same class as patch i's cell."""
    m = np.asarray(m)
    h, w = m.shape
    anchor = m[i // w, i % w]
    row = np.zeros(h * w)
    for n in range(h * w):
        row[n] = 1.0 if m[n // w, n % w] == anchor else 0.0
    return row


def reach_row_ref(m: np.ndarray, i: int, connectivity: int = 8) -> np.ndarray:
    """BFS from patch i over same-class neighbors; 1 where reachable."""
    m = np.asarray(m)
    h, w = m.shape
    ay, ax = divmod(i, w)
    cls = m[ay, ax]
    if connectivity == 8:
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        steps = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    seen = np.zeros((h, w), dtype=bool)
    seen[ay, ax] = True
    queue = deque([(ay, ax)])
    while queue:
        y, x = queue.popleft()
        for dy, dx in steps:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and m[ny, nx] == cls:
                seen[ny, nx] = True
                queue.append((ny, nx))
    return seen.reshape(-1).astype(np.float64)


def decay_row_ref(h: int, w: int, i: int) -> np.ndarray:
    """exp(-chebyshev/d_max) from patch i to every patch."""
    ay, ax = divmod(i, w)
    d_max = max(h - 1, w - 1, 1)
    row = np.zeros(h * w)
    for n in range(h * w):
        ny, nx = divmod(n, w)
        cheb = max(abs(ny - ay), abs(nx - ax))
        row[n] = math.exp(-cheb / d_max)
    return row


def smooth_vector_ref(row: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Normalized Gaussian correlation with replicate edge padding."""
    row = np.asarray(row, dtype=np.float64)
    half = size // 2
    taps = np.array([math.exp(-((j - half) ** 2) / (2.0 * sigma * sigma)) for j in range(size)])
    taps = taps / taps.sum()
    n = row.shape[0]
    out = np.zeros(n)
    for pos in range(n):
        acc = 0.0
        for j in range(size):
            src = min(max(pos + j - half, 0), n - 1)
            acc += taps[j] * row[src]
        out[pos] = acc
    return out


def sfr_row_ref(
    m: np.ndarray, i: int, size: int = 5, sigma: float = 1.0, connectivity: int = 8
) -> np.ndarray:
    """One literal feedback row: indicator ⊙ (reach ? 1 : decay), smoothed."""
    m = np.asarray(m)
    h, w = m.shape
    mask = same_class_row_ref(m, i)
    reach = reach_row_ref(m, i, connectivity)
    decay = decay_row_ref(h, w, i)
    pre = mask * (reach + (1.0 - reach) * decay)
    return smooth_vector_ref(pre, size, sigma)


def sfr_matrix_ref(
    m: np.ndarray, size: int = 5, sigma: float = 1.0, connectivity: int = 8
) -> np.ndarray:
    m = np.asarray(m)
    hw = m.shape[0] * m.shape[1]
    return np.stack([sfr_row_ref(m, i, size, sigma, connectivity) for i in range(hw)])


def gaussian_prior_ref(h: int, w: int, sigma: float) -> np.ndarray:
    """exp(-||p-q||² / 2σ²) over the patch grid; cls row/col zero."""
    n = 1 + h * w
    out = np.zeros((n, n))
    for a in range(h * w):
        ay, ax = divmod(a, w)
        for b in range(h * w):
            by, bx = divmod(b, w)
            d2 = (ay - by) ** 2 + (ax - bx) ** 2
            out[1 + a, 1 + b] = math.exp(-d2 / (2.0 * sigma * sigma))
    return out


# ----------------------------------------------------- straight-line ViT


def vit_reference(image: np.ndarray, tensors: dict, meta: dict) -> np.ndarray:
    """Plain ViT forward in float64, vanilla attention in every block.

    Consumes the raw tensor dict straight from a container file (not the
    package's bundle type). The positional grid must already match the
    image grid. Returns patch features after the final norm + projection,
    cls row dropped.
    """
    p = int(meta["patch_size"])
    layers = int(meta["layers"])
    heads = int(meta["heads"])
    d = int(meta["dim"])
    eps = float(meta.get("eps", 1e-5))
    act = str(meta.get("act", "quick_gelu"))

    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[0] // p, img.shape[1] // p
    rows = []
    for gy in range(h):
        for gx in range(w):
            patch = img[gy * p : (gy + 1) * p, gx * p : (gx + 1) * p, :]
            rows.append(patch.transpose(2, 0, 1).reshape(-1))  # (c, y, x) order
    t64 = {name: np.asarray(t, dtype=np.float64) for name, t in tensors.items()}

    x = np.stack(rows) @ t64["patch_proj"]
    x = np.concatenate([t64["cls_token"][None, :], x], axis=0)
    assert t64["pos_embed"].shape[0] == x.shape[0], "reference assumes a matching pos grid"
    x = x + t64["pos_embed"]

    def ln(v, gamma, beta):
        mu = v.mean(axis=-1, keepdims=True)
        var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * gamma + beta

    x = ln(x, t64["pre_ln.gamma"], t64["pre_ln.beta"])
    dh = d // heads

    def split(mat):
        return mat.reshape(-1, heads, dh).transpose(1, 0, 2)

    for i in range(layers):
        g = lambda name: t64[f"layer{i}.{name}"]  # noqa: E731
        xn = ln(x, g("ln1.gamma"), g("ln1.beta"))
        q = split(xn @ g("Wq") + g("bq"))
        k = split(xn @ g("Wk") + g("bk"))
        v = split(xn @ g("Wv") + g("bv"))
        attn = softmax_rows_ref(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
        merged = (attn @ v).transpose(1, 0, 2).reshape(-1, d)
        x = x + (merged @ g("Wo") + g("bo"))
        xn2 = ln(x, g("ln2.gamma"), g("ln2.beta"))
        hidden = xn2 @ g("mlp_fc.W") + g("mlp_fc.b")
        hidden = gelu_ref(hidden) if act == "gelu" else quick_gelu_ref(hidden)
        x = x + (hidden @ g("mlp_proj.W") + g("mlp_proj.b"))

    x = ln(x, t64["final_ln.gamma"], t64["final_ln.beta"])
    return (x @ t64["visual_proj"])[1:]


# ----------------------------------------------------------- evaluation


def confusion_ref(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int = 255) -> np.ndarray:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for g, p in zip(np.asarray(gt).reshape(-1), np.asarray(pred).reshape(-1)):
        if g == ignore or g < 0 or g >= num_classes:
            continue
        counts[g, p] += 1
    return counts


def iou_ref(counts: np.ndarray) -> tuple[list, float | None]:
    c = counts.shape[0]
    per = []
    for i in range(c):
        tp = counts[i, i]
        union = counts[i, :].sum() + counts[:, i].sum() - tp
        per.append(float(tp) / float(union) if union > 0 else None)
    present = [v for v in per if v is not None]
    return per, (sum(present) / len(present) if present else None)


# ------------------------------------------------------- container writer


def write_container_ref(path, tensors: dict, meta: dict) -> None:
    """Independent container writer: space-pads the header so offsets never
    feed back into the header length."""
    arrays = {name: np.ascontiguousarray(t, dtype="<f4") for name, t in tensors.items()}
    draft = {"meta": meta}
    probe = 0
    for name, arr in arrays.items():
        draft[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": 10**12}
        probe += 1
    budget = len(json.dumps(draft).encode("utf-8")) + 64
    payload_start = ((16 + budget) + 63) // 64 * 64

    header = {"meta": meta}
    offset = payload_start
    chunks = []
    for name, arr in arrays.items():
        offset = (offset + 63) // 64 * 64
        header[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        chunks.append((offset, arr.tobytes()))
        offset += arr.nbytes
    blob = json.dumps(header).encode("utf-8")
    blob = blob + b" " * (payload_start - 16 - len(blob))

    buf = bytearray(offset)
    buf[0:8] = b"RESCLIP1"
    buf[8:16] = struct.pack("<Q", len(blob))
    buf[16 : 16 + len(blob)] = blob
    for off, raw in chunks:
        buf[off : off + len(raw)] = raw
    with open(path, "wb") as f:
        f.write(buf)
