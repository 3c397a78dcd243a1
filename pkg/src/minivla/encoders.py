"""Frozen patch encoders and the latent-query resampler.

One shared frozen patch transformer (random but seed-fixed, standing in
for a pretrained backbone) encodes both RGB frames and replicated
standardized depth frames. Because its weights never receive gradients,
the whole encoder runs as plain numpy; the trainable resampler is where
the autodiff tape starts. The resampler holds K learnable latent query
tokens and compresses an N-token sequence to K tokens via single-head
scaled dot-product attention, so its output is invariant to input-token
order.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import DimensionError
from .numerics import ParamSet, Tensor

Array = np.ndarray


# --- frozen patch transformer (numpy only) -----------------------------------


def pos_band(d: int) -> int:
    """Width of the positional channel band at the top of each token."""
    return max(d // 4, 2)


def init_vit_arrays(image_hw: int, patch: int, d: int, blocks: int,
                    rng: np.random.Generator) -> dict[str, Array]:
    in_dim = 3 * patch * patch
    n_tokens = (image_hw // patch) ** 2
    pd = pos_band(d)
    arrays: dict[str, Array] = {
        # Content occupies the lower channels, position the reserved top
        # band. Keeping the bands separate lets attention select by
        # position without content interference (and vice versa). The
        # positional table covers both camera slots, so a token's
        # embedding identifies (camera, patch), not just the patch.
        "patch_proj": rng.normal(0.0, in_dim ** -0.5, size=(in_dim, d - pd)),
        "pos_embed": rng.normal(0.0, 1.0, size=(2 * n_tokens, pd)),
    }
    for b in range(blocks):
        arrays[f"block{b}.wq"] = rng.normal(0.0, d ** -0.5, size=(d, d))
        arrays[f"block{b}.wk"] = rng.normal(0.0, d ** -0.5, size=(d, d))
        arrays[f"block{b}.wv"] = rng.normal(0.0, d ** -0.5, size=(d, d))
        arrays[f"block{b}.mlp_w1"] = rng.normal(0.0, d ** -0.5, size=(d, 4 * d))
        arrays[f"block{b}.mlp_b1"] = np.zeros(4 * d)
        # Half-scale output projection keeps the frozen blocks close to
        # identity, so patch identity and position survive the mixing.
        arrays[f"block{b}.mlp_w2"] = rng.normal(0.0, 0.5 * (4 * d) ** -0.5, size=(4 * d, d))
        arrays[f"block{b}.mlp_b2"] = np.zeros(d)
    return arrays


def patchify(img, patch: int, proj: Array, pos: Array) -> Array:
    """Non-overlapping patches, flattened, projected, with the positional
    embedding in the reserved top channel band."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"patchify expects an (H, W, 3) image, got {arr.shape}")
    h, w, _ = arr.shape
    if h % patch or w % patch:
        raise DimensionError(f"image extents {h}x{w} are not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    flat = (arr.reshape(gh, patch, gw, patch, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * gw, 3 * patch * patch))
    if flat.shape[1] != proj.shape[0]:
        raise DimensionError(
            f"patch width {flat.shape[1]} does not match projection {proj.shape}"
        )
    if pos.shape[0] != gh * gw:
        raise DimensionError(
            f"positional rows {pos.shape[0]} do not match {gh * gw} patches"
        )
    return np.concatenate([flat @ proj, pos], axis=1)


def _np_softmax_rows(x: Array) -> Array:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _np_attention(q: Array, k: Array, v: Array) -> Array:
    scores = q @ k.T / np.sqrt(q.shape[1])
    return _np_softmax_rows(scores) @ v


def _np_block(x: Array, vit: dict[str, Array], b: int) -> Array:
    att = _np_attention(x @ vit[f"block{b}.wq"], x @ vit[f"block{b}.wk"],
                        x @ vit[f"block{b}.wv"])
    h = np.tanh(att @ vit[f"block{b}.mlp_w1"] + vit[f"block{b}.mlp_b1"])
    return h @ vit[f"block{b}.mlp_w2"] + vit[f"block{b}.mlp_b2"] + x


def vit_encode_image(img, vit: dict[str, Array], patch: int, blocks: int,
                     camera: int = 0) -> Array:
    pos = vit["pos_embed"]
    n = pos.shape[0] // 2
    x = patchify(img, patch, vit["patch_proj"], pos[camera * n:(camera + 1) * n])
    for b in range(blocks):
        x = _np_block(x, vit, b)
    return x


def vit_encode_pair(a, b, vit: dict[str, Array], patch: int, blocks: int) -> Array:
    """Encode the two camera frames independently and concatenate tokens."""
    arr_a = np.asarray(a)
    arr_b = np.asarray(b)
    if arr_a.shape != arr_b.shape:
        raise DimensionError(
            f"camera frames differ in extent: {arr_a.shape} vs {arr_b.shape}"
        )
    return np.concatenate([
        vit_encode_image(arr_a, vit, patch, blocks, camera=0),
        vit_encode_image(arr_b, vit, patch, blocks, camera=1),
    ], axis=0)


# --- trainable resampler (on the tape) ---------------------------------------


def init_resampler_arrays(k: int, d_in: int, d: int, rng: np.random.Generator,
                          pos_embed: Array | None = None) -> dict[str, Array]:
    """Latent queries, key/value projections.

    When the positional table is supplied (and dims are square), the
    start is a spatial pooler: keys project onto the positional band,
    values pass tokens through, and latent j is the scaled mean of the
    j-th positional tile. Attention then tiles the token sequence at
    initialization, preserving coarse content-position binding; training
    sharpens it from there. Without a table the init is plain random.
    """
    if pos_embed is None or d_in != d:
        return {
            "latents": rng.normal(0.0, 0.5, size=(k, d)),
            "wk": rng.normal(0.0, d_in ** -0.5, size=(d_in, d)),
            "wv": rng.normal(0.0, d_in ** -0.5, size=(d_in, d)),
        }
    pd = pos_embed.shape[1]
    wk = rng.normal(0.0, 0.02, size=(d_in, d))
    wk[d_in - pd:, d - pd:] += np.eye(pd)
    wv = np.eye(d_in) + rng.normal(0.0, 0.02, size=(d_in, d))
    latents = rng.normal(0.0, 0.02, size=(k, d))
    for j, rows in enumerate(_square_tiles(pos_embed.shape[0], k)):
        tile = pos_embed[rows].mean(axis=0)
        norm = float(np.linalg.norm(tile)) + 1e-9
        latents[j, d - pd:] += 3.0 * np.sqrt(d) * tile / norm
    return {"latents": latents, "wk": wk, "wv": wv}


def _square_tiles(n_rows: int, k: int) -> list[np.ndarray]:
    """Partition the two camera slots' patch grids into k near-square tiles."""
    n = n_rows // 2
    g = int(round(np.sqrt(n)))
    per_cam = max(k // 2, 1)
    a = max(int(round(np.sqrt(per_cam))), 1)
    while per_cam % a:
        a -= 1
    b = per_cam // a  # a tiles along y, b along x
    tiles = []
    for cam in (0, 1):
        for ty in range(a):
            for tx in range(b):
                ys = range(ty * g // a, (ty + 1) * g // a)
                xs = range(tx * g // b, (tx + 1) * g // b)
                rows = [cam * n + y * g + x for y in ys for x in xs]
                tiles.append(np.asarray(rows if rows else [cam * n], dtype=np.intp))
    while len(tiles) < k:  # odd k: duplicate coarse camera tiles
        tiles.append(np.arange(n, dtype=np.intp))
    return tiles[:k]


def resample(tokens, latents: Tensor, wk: Tensor, wv: Tensor) -> Tensor:
    """Compress N input tokens to the K latent queries' attention readout."""
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.data.ndim != 2:
        raise DimensionError(f"resample expects (N, d_in) tokens, got {x.shape}")
    if x.shape[1] != wk.shape[0]:
        raise DimensionError(
            f"token width {x.shape[1]} does not match resampler input {wk.shape[0]}"
        )
    keys = nm.matmul(x, wk)
    values = nm.matmul(x, wv)
    return nm.scaled_dot_attention(latents, keys, values)


def fuse_concat(xv: Tensor, xde: Tensor) -> Tensor:
    """RGB tokens first, depth tokens second."""
    if xv.shape[-1] != xde.shape[-1]:
        raise DimensionError(
            f"fused token widths disagree: {xv.shape} vs {xde.shape}"
        )
    return nm.concat_rows([xv, xde])
