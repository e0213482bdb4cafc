"""Model parameters and the graph aggregation / reconstruction pipeline.

Local branch: patterns are combined with learned scalars, symmetrised,
self-looped and degree-normalised; node attributes propagate through a
stack of linear layers (no activations) and the per-depth outputs are
averaged.

Global branch: per-pattern incoming-weight totals form a compact node
descriptor matrix B (columns scaled by learned scalars); the row-L1
normalised similarity B @ B.T drives one propagation that keeps only the
deepest layer output.

The fused node representation is the mean of the two branches.  A per-band
linear head maps each patch's (pan node, band node) feature pair to a pixel
block; blocks are overlap-averaged and added to the upsampled multispectral
input, so training starts from the plain bicubic baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .graph import HetGraph, build_graph, embed_patches
from .imaging import BANDS, Image, PatchGrid, ScenePair, extract_patches, upsample_bicubic
from .patterns import MAX_PATTERNS, PatternSet, generate_patterns

_DEGREE_FLOOR = 1e-12
_INIT_PATTERNS = 3  # disjoint relation supports give three singleton patterns


@dataclass
class ModelParams:
    """All learned arrays.  Scalar groups alpha/beta hold one slot per
    possible relation-subset bitmask; slot m-1 belongs to mask m."""

    w_pan: object
    w_band: list
    alpha: object
    beta: object
    w_local: list
    w_global: list
    recon: list

    @staticmethod
    def init(cfg: TrainConfig, seed: int | None = None, zero_recon: bool = True) -> "ModelParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        dt = cfg.dtype
        p2 = cfg.patch * cfg.patch

        def glorot(shape):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-bound, bound, size=shape).astype(dt)

        recon_scale = 0.0 if zero_recon else 0.02
        return ModelParams(
            w_pan=glorot((cfg.d, p2)),
            w_band=[glorot((cfg.d, p2)) for _ in range(BANDS)],
            alpha=np.full(MAX_PATTERNS, 1.0 / _INIT_PATTERNS, dtype=dt),
            beta=np.ones(MAX_PATTERNS, dtype=dt),
            w_local=[glorot((cfg.d, cfg.d)) for _ in range(cfg.layers)],
            w_global=[glorot((cfg.d, cfg.d)) for _ in range(cfg.layers)],
            recon=[
                rng.uniform(-recon_scale, recon_scale, size=(p2, 2 * cfg.d)).astype(dt)
                if recon_scale
                else np.zeros((p2, 2 * cfg.d), dtype=dt)
                for _ in range(BANDS)
            ],
        )

    def named_arrays(self):
        """Stable (name, array) list; names double as checkpoint block ids."""
        out = [("w_pan", self.w_pan)]
        out += [(f"w_band_{b}", w) for b, w in enumerate(self.w_band)]
        out += [("alpha", self.alpha), ("beta", self.beta)]
        out += [(f"w_local_{i}", w) for i, w in enumerate(self.w_local)]
        out += [(f"w_global_{i}", w) for i, w in enumerate(self.w_global)]
        out += [(f"recon_{b}", r) for b, r in enumerate(self.recon)]
        return out

    @staticmethod
    def group_of(name: str) -> str:
        return name.rsplit("_", 1)[0] if name[-1].isdigit() else name

    def copy(self) -> "ModelParams":
        return ModelParams(
            w_pan=np.array(self.w_pan),
            w_band=[np.array(w) for w in self.w_band],
            alpha=np.array(self.alpha),
            beta=np.array(self.beta),
            w_local=[np.array(w) for w in self.w_local],
            w_global=[np.array(w) for w in self.w_global],
            recon=[np.array(r) for r in self.recon],
        )

    def astype(self, dt) -> "ModelParams":
        return ModelParams(
            w_pan=np.asarray(self.w_pan, dtype=dt),
            w_band=[np.asarray(w, dtype=dt) for w in self.w_band],
            alpha=np.asarray(self.alpha, dtype=dt),
            beta=np.asarray(self.beta, dtype=dt),
            w_local=[np.asarray(w, dtype=dt) for w in self.w_local],
            w_global=[np.asarray(w, dtype=dt) for w in self.w_global],
            recon=[np.asarray(r, dtype=dt) for r in self.recon],
        )

    def to_tensors(self):
        """(tensor-valued params, name -> tensor map) for differentiation."""
        tensors = {name: ad.Tensor(arr) for name, arr in self.named_arrays()}
        tp = ModelParams(
            w_pan=tensors["w_pan"],
            w_band=[tensors[f"w_band_{b}"] for b in range(len(self.w_band))],
            alpha=tensors["alpha"],
            beta=tensors["beta"],
            w_local=[tensors[f"w_local_{i}"] for i in range(len(self.w_local))],
            w_global=[tensors[f"w_global_{i}"] for i in range(len(self.w_global))],
            recon=[tensors[f"recon_{b}"] for b in range(len(self.recon))],
        )
        return tp, tensors


@dataclass
class NodeRepr:
    """Node representations; under ablation the surviving branch is stored
    in all three slots so h == (h_local + h_global) / 2 always holds."""

    h_local: object
    h_global: object
    h: object


def _coalesce(n, rows, cols, vals):
    keys = rows * n + cols
    uniq, inv = np.unique(keys, return_inverse=True)
    summed = ad.index_add(len(uniq), inv, vals)
    return uniq // n, uniq % n, summed


def aggregate_local(ps: PatternSet, U, alpha, w_local) -> object:
    """Pattern-weighted local propagation with depth averaging."""
    if len(ps) == 0:
        raise ValueError("empty pattern set")
    n = ps.n_nodes
    rows = np.concatenate([p.rows for p in ps])
    cols = np.concatenate([p.cols for p in ps])
    vals = ad.concatenate([p.vals * alpha[p.mask - 1] for p in ps], axis=0)

    # symmetrise, add self-loops, coalesce duplicates
    dtype = ad.value(vals).dtype
    sym_rows = np.concatenate([rows, cols, np.arange(n)])
    sym_cols = np.concatenate([cols, rows, np.arange(n)])
    sym_vals = ad.concatenate([vals * 0.5, vals * 0.5, np.ones(n, dtype=dtype)], axis=0)
    crows, ccols, cvals = _coalesce(n, sym_rows, sym_cols, sym_vals)

    # symmetric degree normalisation with a floor against non-positive rows
    deg = ad.index_add(n, crows, cvals)
    live = (ad.value(deg) > _DEGREE_FLOOR).astype(dtype)
    dinv = live / ad.sqrt(deg * live + (1.0 - live))
    w = cvals * dinv[crows] * dinv[ccols]

    au = ad.index_add(n, crows, ad.reshape(w, (-1, 1)) * U[ccols])
    h = au
    acc = None
    for wl in w_local:
        h = h @ wl
        acc = h if acc is None else acc + h
    return acc / float(len(w_local))


def build_global_pattern_matrix(ps: PatternSet, beta) -> object:
    """Stack per-pattern incoming-weight totals, columns scaled by beta."""
    if len(ps) == 0:
        raise ValueError("empty pattern set")
    n = ps.n_nodes
    cols = []
    for p in ps:
        totals = ad.index_add(n, p.rows, p.vals)
        cols.append(ad.reshape(totals * beta[p.mask - 1], (n, 1)))
    return ad.concatenate(cols, axis=1)


def global_similarity(B) -> object:
    """Row-L1-normalised B @ B.T; all-zero rows stay zero."""
    s = B @ ad.transpose(B)
    r = ad.sum(ad.absolute(s), axis=1, keepdims=True)
    live = (ad.value(r) > 0.0).astype(ad.value(r).dtype)
    return (s / (r * live + (1.0 - live))) * live


def aggregate_global(A, U, w_global) -> object:
    """One dense propagation; only the deepest layer output is kept."""
    h = A @ U
    for wg in w_global:
        h = h @ wg
    return h


def fuse(h_local, h_global) -> object:
    return (h_local + h_global) * 0.5


def reconstruct(H, grid: PatchGrid, recon, lrms_up: Image):
    """Per-band linear heads on (pan, band) node pairs, overlap-averaged and
    added to the upsampled input; clamped to [0, 1].  Returns the raw
    (h, w, bands) array (plain or tensor, matching H)."""
    n = grid.n_patches
    idx = grid.pixel_indices  # (n, p*p) for the 1-channel pan grid
    counts = np.maximum(grid.coverage_counts, 1)
    hw = grid.height * grid.width
    dtype = ad.value(H).dtype

    h_pan = H[np.arange(n)]
    bands = []
    flat_idx = idx.reshape(-1)
    for b in range(BANDS):
        band_rows = n + BANDS * np.arange(n) + b
        z = ad.concatenate([h_pan, H[band_rows]], axis=1)  # (n, 2d)
        blocks = z @ ad.transpose(recon[b])  # (n, p*p)
        summed = ad.index_add(hw, flat_idx, ad.reshape(blocks, (-1,)))
        residual = summed / counts.astype(dtype)
        base = lrms_up.data[:, :, b].reshape(-1).astype(dtype)
        fused_b = ad.clip(residual + base, 0.0, 1.0)
        bands.append(ad.reshape(fused_b, (grid.height, grid.width, 1)))
    return ad.concatenate(bands, axis=2)


@dataclass
class PipelineOutput:
    fused: object  # (h, w, bands) array or tensor
    repr: NodeRepr
    graph: HetGraph
    patterns: PatternSet
    lrms_up: Image
    pan_grid: PatchGrid


def run_pipeline(
    scene: ScenePair,
    params: ModelParams,
    cfg: TrainConfig,
    structure=None,
) -> PipelineOutput:
    """Full model pass; plain arrays in, plain arrays out, unless ``params``
    carries autodiff tensors."""
    scene.validate()
    cfg.validate()
    lrms_up = upsample_bicubic(scene.lrms, scene.scale)
    pan_grid = extract_patches(scene.pan, cfg.patch, cfg.stride)
    band_grids = [
        extract_patches(lrms_up.band(b), cfg.patch, cfg.stride) for b in range(BANDS)
    ]
    xp, ys = embed_patches(pan_grid, band_grids, params.w_pan, params.w_band)
    g = build_graph(xp, ys, cfg.k, structure=structure)
    ps = generate_patterns(g)

    if cfg.ablate == "local-only":
        h_local = aggregate_local(ps, g.U, params.alpha, params.w_local)
        h_global = h_local
        h = h_local
    elif cfg.ablate == "global-only":
        B = build_global_pattern_matrix(ps, params.beta)
        h_global = aggregate_global(global_similarity(B), g.U, params.w_global)
        h_local = h_global
        h = h_global
    else:
        h_local = aggregate_local(ps, g.U, params.alpha, params.w_local)
        B = build_global_pattern_matrix(ps, params.beta)
        h_global = aggregate_global(global_similarity(B), g.U, params.w_global)
        h = fuse(h_local, h_global)

    fused = reconstruct(h, pan_grid, params.recon, lrms_up)
    return PipelineOutput(
        fused=fused,
        repr=NodeRepr(h_local=h_local, h_global=h_global, h=h),
        graph=g,
        patterns=ps,
        lrms_up=lrms_up,
        pan_grid=pan_grid,
    )


@dataclass
class ForwardResult:
    fused: Image
    repr: NodeRepr
    graph: HetGraph
    patterns: PatternSet
    lrms_up: Image


def forward(scene: ScenePair, params: ModelParams, cfg: TrainConfig) -> ForwardResult:
    """Inference-mode pass returning the fused image."""
    out = run_pipeline(scene, params, cfg)
    fused = Image.from_array(ad.value(out.fused))
    return ForwardResult(
        fused=fused,
        repr=out.repr,
        graph=out.graph,
        patterns=out.patterns,
        lrms_up=out.lrms_up,
    )
