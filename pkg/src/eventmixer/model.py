"""The graph mixer segmentation network.

The network is a U-shaped encoder-decoder over a 3D event graph. Its
mixing layer scores each query's neighbors at several kNN levels in
parallel (a channel-mix MLP on the neighbor feature concatenated with a
relative-position encoding, mapped to a scalar score), softmax-normalizes
the scores over each neighborhood, sums the value-MLP outputs with those
weights, combines the per-k results by a fixed weighted sum, and finally
mixes across neighborhoods through the inverse index map with a residual
MLP. Transition-down blocks reduce node count by a factor R via farthest
point sampling and pass features through the same scored aggregation over
cross maps; transition-up blocks scatter coarse features back through the
stored inverse maps, concatenate the encoder skip features, and fuse with
an MLP.

The forward pass reorders nodes into the canonical (t, x, y) order
internally and restores the input order on output. All reductions then
run in a label-independent order, which makes the logits exactly
equivariant under input node permutations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams, Tape, Var, init_mlp, mlp_forward
from .errors import ConfigError, DataError, ShapeError
from .graph import (
    EventGraph,
    IndexMap,
    InverseIndexMap,
    canonical_rank,
    cross_pyramid,
    farthest_point_sample,
    invert_index_map,
    knn_pyramid,
    nearest_reference,
)

DEFAULT_LEVEL_WEIGHTS = (0.10, 0.20, 0.30, 0.40)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; the digest keys checkpoints to configs."""

    n_classes: int = 10
    widths: tuple[int, ...] = (32, 64, 128, 256)
    k_set: tuple[int, ...] = (16, 32, 48, 64)
    level_weights: tuple[float, ...] | None = None
    reduction: int = 4
    activation: str = "relu"
    per_channel_scores: bool = False
    include_self: bool = True
    knn_method: str = "auto"
    seed: int = 0

    def __post_init__(self) -> None:
        self.widths = tuple(int(w) for w in self.widths)
        self.k_set = tuple(int(k) for k in self.k_set)
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        if not self.k_set or any(k < 1 for k in self.k_set):
            raise ConfigError(f"k_set must be positive, got {self.k_set}")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.level_weights is None:
            if len(self.k_set) == len(DEFAULT_LEVEL_WEIGHTS):
                self.level_weights = DEFAULT_LEVEL_WEIGHTS
            else:
                self.level_weights = tuple(1.0 / len(self.k_set) for _ in self.k_set)
        self.level_weights = tuple(float(w) for w in self.level_weights)
        if len(self.level_weights) != len(self.k_set):
            raise ConfigError("level_weights must match k_set length")
        if any(w < 0 for w in self.level_weights):
            raise ConfigError("level weights must be non-negative")
        if abs(math.fsum(self.level_weights) - 1.0) > 1e-9:
            raise ConfigError(f"level weights must sum to 1, got {self.level_weights}")

    @property
    def depth(self) -> int:
        return len(self.widths)

    def level_widths(self) -> list[int]:
        """Feature width at each graph level, index 0 = full resolution."""
        return [self.widths[0], *self.widths]

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "widths": list(self.widths),
            "k_set": list(self.k_set),
            "level_weights": list(self.level_weights),
            "reduction": self.reduction,
            "activation": self.activation,
            "per_channel_scores": self.per_channel_scores,
            "include_self": self.include_self,
            "knn_method": self.knn_method,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f: doc[f] for f in doc}
        try:
            cfg = cls(**known)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None
        cfg.widths = tuple(cfg.widths)
        cfg.k_set = tuple(cfg.k_set)
        if cfg.level_weights is not None:
            cfg.level_weights = tuple(cfg.level_weights)
        return cfg

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CcmParams:
    """Per-level MLPs of one mixing block.

    g1 channel-mixes the neighbor feature, delta encodes the relative
    position, g2 maps their concatenation to the score, g3 produces the
    value. ``inter`` (intra-set blocks only) is the residual inter-set
    MLP. ``level_weights`` are fixed aggregation weights, not trained.
    """

    g1: list[MlpParams]
    g2: list[MlpParams]
    g3: list[MlpParams]
    delta: list[MlpParams]
    level_weights: np.ndarray
    inter: MlpParams | None = None

    def n_levels(self) -> int:
        return len(self.g1)


@dataclass
class ModelParams:
    """All stages of the network plus the config that shaped them."""

    config: ModelConfig
    stem: MlpParams
    enc_down: list[CcmParams]
    enc_mix: list[CcmParams]
    bottleneck: CcmParams
    dec_fuse: list[MlpParams]
    dec_mix: list[CcmParams]
    header: MlpParams


def _init_ccm(
    cfg: ModelConfig,
    rng: np.random.Generator,
    in_width: int,
    out_width: int,
    with_inter: bool,
) -> CcmParams:
    score_width = out_width if cfg.per_channel_scores else 1
    g1, g2, g3, delta = [], [], [], []
    for _ in cfg.k_set:
        g1.append(init_mlp([in_width, in_width], rng, cfg.activation))
        delta.append(init_mlp([3, in_width], rng, cfg.activation))
        g2.append(init_mlp([2 * in_width, score_width], rng, cfg.activation, activate_last=False))
        g3.append(init_mlp([in_width, out_width], rng, cfg.activation))
    inter = init_mlp([out_width, out_width], rng, cfg.activation) if with_inter else None
    return CcmParams(
        g1=g1,
        g2=g2,
        g3=g3,
        delta=delta,
        level_weights=np.asarray(cfg.level_weights, dtype=np.float64),
        inter=inter,
    )


def init_model(config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    lw = config.level_widths()
    depth = config.depth
    stem = init_mlp([3, lw[0]], rng, config.activation)
    enc_down = [_init_ccm(config, rng, lw[l], lw[l + 1], with_inter=False) for l in range(depth)]
    enc_mix = [_init_ccm(config, rng, lw[l + 1], lw[l + 1], with_inter=True) for l in range(depth)]
    bottleneck = _init_ccm(config, rng, lw[depth], lw[depth], with_inter=True)
    dec_fuse = [
        init_mlp([lw[depth - i] + lw[depth - i - 1], lw[depth - i - 1]], rng, config.activation)
        for i in range(depth)
    ]
    dec_mix = [
        _init_ccm(config, rng, lw[depth - i - 1], lw[depth - i - 1], with_inter=True)
        for i in range(depth)
    ]
    header = init_mlp([lw[0], lw[0], config.n_classes], rng, config.activation, activate_last=False)
    return ModelParams(config, stem, enc_down, enc_mix, bottleneck, dec_fuse, dec_mix, header)


def _named_mlps(model: ModelParams) -> Iterator[tuple[str, MlpParams]]:
    yield "stem", model.stem
    for group, blocks in (("enc_down", model.enc_down), ("enc_mix", model.enc_mix)):
        for bi, ccm in enumerate(blocks):
            yield from _ccm_mlps(f"{group}.{bi}", ccm)
    yield from _ccm_mlps("bottleneck", model.bottleneck)
    for i, mlp in enumerate(model.dec_fuse):
        yield f"dec_fuse.{i}", mlp
    for bi, ccm in enumerate(model.dec_mix):
        yield from _ccm_mlps(f"dec_mix.{bi}", ccm)
    yield "header", model.header


def _ccm_mlps(prefix: str, ccm: CcmParams) -> Iterator[tuple[str, MlpParams]]:
    for li in range(ccm.n_levels()):
        yield f"{prefix}.g1.{li}", ccm.g1[li]
        yield f"{prefix}.g2.{li}", ccm.g2[li]
        yield f"{prefix}.g3.{li}", ccm.g3[li]
        yield f"{prefix}.delta.{li}", ccm.delta[li]
    if ccm.inter is not None:
        yield f"{prefix}.inter", ccm.inter


def named_parameters(model: ModelParams) -> dict[str, Var]:
    out: dict[str, Var] = {}
    for name, mlp in _named_mlps(model):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            out[f"{name}.w{i}"] = w
            out[f"{name}.b{i}"] = b
    return out


def parameters(model: ModelParams) -> list[Var]:
    return list(named_parameters(model).values())


def count_parameters(model: ModelParams) -> int:
    """Trainable MLP parameters plus the fixed level-weight entries."""
    total = sum(mlp.parameter_count() for _, mlp in _named_mlps(model))
    blocks = [*model.enc_down, *model.enc_mix, model.bottleneck, *model.dec_mix]
    total += sum(len(b.level_weights) for b in blocks)
    return total


# ---------------------------------------------------------------------------
# Graph level structures
# ---------------------------------------------------------------------------


@dataclass
class LevelStructure:
    """Index structures of one resolution level (parameter-free).

    ``pyramid``/``pyramid_masks`` hold the intra maps per configured k
    (entries may share arrays when k values repeat). Levels above the
    root also carry their sampling indices, the cross maps into the
    parent level, the inverse of the largest cross map (domain = parent),
    and a per-parent fallback to the nearest sampled node.
    """

    positions: np.ndarray
    pyramid: list[IndexMap]
    pyramid_masks: list[np.ndarray | None]
    inter_inverse: InverseIndexMap
    sample_indices: np.ndarray | None = None
    down_maps: list[IndexMap] | None = None
    down_masks: list[np.ndarray] | None = None
    up_inverse: InverseIndexMap | None = None
    up_fallback: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.positions)


def _unique_pyramid(positions: np.ndarray, k_set, method: str, include_self: bool):
    """Intra maps for each configured k, reusing maps of duplicate ks.

    A single-node level always keeps its one node in its own row: with
    self-exclusion the neighborhood would be empty and the softmax
    aggregation undefined.
    """
    include = include_self or len(positions) == 1
    uniq = sorted(set(int(k) for k in k_set))
    graph = EventGraph(positions)
    pyr = knn_pyramid(graph, tuple(uniq), method=method, include_self=include)
    by_k = {k: m for k, m in zip(uniq, pyr.levels)}
    return [by_k[int(k)] for k in k_set]


def build_structure(
    positions: np.ndarray,
    config: ModelConfig,
) -> list[LevelStructure]:
    """FPS/kNN pyramid chain for one graph, from full resolution down.

    Level l+1 has ceil(n_l / R) nodes. The intra pyramid, the cross maps
    into the parent, and their inverses are all computed here so the
    parameterized passes are pure dense math.
    """
    method = config.knn_method
    k_set = config.k_set
    levels: list[LevelStructure] = []
    pyramid = _unique_pyramid(positions, k_set, method, config.include_self)
    inter_inv = invert_index_map(pyramid[-1], len(positions))
    levels.append(
        LevelStructure(
            positions=positions,
            pyramid=pyramid,
            pyramid_masks=[None] * len(pyramid),
            inter_inverse=inter_inv,
        )
    )
    for _ in range(config.depth):
        parent = levels[-1]
        n = parent.n_nodes
        m = -(-n // config.reduction)  # ceil
        sample = farthest_point_sample(parent.positions, m)
        spos = parent.positions[sample]
        uniq = sorted(set(int(k) for k in k_set))
        parent_graph = EventGraph(parent.positions)
        cross_uniq = cross_pyramid(sample, parent_graph, tuple(uniq), method=method)
        by_k = {k: mp for k, mp in zip(uniq, cross_uniq)}
        down_maps = [by_k[int(k)] for k in k_set]
        up_inverse = invert_index_map(down_maps[-1], n)
        up_fallback = nearest_reference(parent.positions, spos, method=method)
        pyramid = _unique_pyramid(spos, k_set, method, config.include_self)
        levels.append(
            LevelStructure(
                positions=spos,
                pyramid=pyramid,
                pyramid_masks=[None] * len(pyramid),
                inter_inverse=invert_index_map(pyramid[-1], m),
                sample_indices=sample,
                down_maps=down_maps,
                down_masks=None,
                up_inverse=up_inverse,
                up_fallback=up_fallback,
            )
        )
    return levels


# ---------------------------------------------------------------------------
# Mixing layer
# ---------------------------------------------------------------------------


def ccm_scores(
    ccm: CcmParams,
    level_idx: int,
    query_positions: np.ndarray,
    ref_positions: np.ndarray,
    ref_feats: Var,
    index_map: IndexMap,
    tape: Tape | None,
) -> Var:
    """Neighbor scores: g2([g1(x_j); delta(e_i - e_j)]) per map entry.

    Returns (n_queries, L) scalar scores, or (n_queries, L, C) when the
    block scores per channel. For a single-layer g2 the affine map is
    split across the concat halves, so the node half is scored once per
    node and only the per-pair position half runs at pair granularity.
    """
    rows = index_map.rows
    nq, L = rows.shape
    rel = query_positions[:, None, :] - ref_positions[rows]
    enc = mlp_forward(ccm.delta[level_idx], Var(rel.reshape(-1, 3)), tape)
    mixed = mlp_forward(ccm.g1[level_idx], ref_feats, tape)
    g2 = ccm.g2[level_idx]
    c1 = mixed.value.shape[1]
    if len(g2.weights) == 1 and not g2.activate_last:
        w, b = g2.weights[0], g2.biases[0]
        node_part = ad.matmul_rows_slice(mixed, w, 0, c1, tape)
        pair_part = ad.matmul_rows_slice(enc, w, c1, w.value.shape[0], tape)
        per_node = ad.reshape(ad.gather_rows(node_part, rows, tape),
                              (nq * L, node_part.value.shape[1]), tape)
        s = ad.add_bias(ad.add(per_node, pair_part, tape), b, tape)
    else:
        gathered = ad.gather_rows(mixed, rows, tape)
        flat = ad.reshape(gathered, (nq * L, c1), tape)
        s = mlp_forward(g2, ad.concat_cols(flat, enc, tape), tape)
    score_width = s.value.shape[1]
    shape = (nq, L) if score_width == 1 else (nq, L, score_width)
    return ad.reshape(s, shape, tape)


def ccm_intra_set(
    ccm: CcmParams,
    level_idx: int,
    scores: Var,
    ref_feats: Var,
    index_map: IndexMap,
    tape: Tape | None,
    mask: np.ndarray | None = None,
) -> Var:
    """Softmax the scores over each neighborhood and sum the g3 values."""
    weights = ad.softmax_rows(scores, tape, mask=mask)
    values = mlp_forward(ccm.g3[level_idx], ref_feats, tape)
    gathered = ad.gather_rows(values, index_map.rows, tape)
    return ad.weighted_neighbor_sum(weights, gathered, tape)


def ccm_level_aggregate(level_outputs: list[Var], weights: np.ndarray, tape: Tape | None) -> Var:
    """Fixed weighted sum across k levels, compensated so that equal
    inputs with weights summing to 1 return the input to within one ulp."""
    if len(level_outputs) != len(weights):
        raise ShapeError(f"{len(level_outputs)} level outputs vs {len(weights)} weights")
    first = level_outputs[0].value
    total = np.zeros_like(first)
    comp = np.zeros_like(first)
    for w, u in zip(weights, level_outputs):
        term = w * u.value
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    out = Var(total)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            for w, u in zip(weights, level_outputs):
                ad._accum(u, w * out.grad)
        tape.record(backward)
    return out


def ccm_inter_set(ccm: CcmParams, u: Var, inter_inverse: InverseIndexMap, tape: Tape | None) -> Var:
    """Mix across neighborhoods: u + MLP(mean of u over sets containing each node)."""
    if ccm.inter is None:
        raise ShapeError("this block has no inter-set MLP")
    mixed = ad.scatter_mean(u, inter_inverse, tape)
    return ad.add(u, mlp_forward(ccm.inter, mixed, tape), tape)


def mixer_block(ccm: CcmParams, level: LevelStructure, feats: Var, tape: Tape | None) -> Var:
    """One intra-set + inter-set mixing pass at a single level."""
    outs = []
    for li, index_map in enumerate(level.pyramid):
        mask = level.pyramid_masks[li]
        s = ccm_scores(ccm, li, level.positions, level.positions, feats, index_map, tape)
        outs.append(ccm_intra_set(ccm, li, s, feats, index_map, tape, mask=mask))
    u = ccm_level_aggregate(outs, ccm.level_weights, tape)
    return ccm_inter_set(ccm, u, level.inter_inverse, tape)


def transition_down(
    ccm: CcmParams,
    child: LevelStructure,
    parent: LevelStructure,
    parent_feats: Var,
    tape: Tape | None,
) -> Var:
    """Pass parent features to the sampled child nodes via scored cross maps."""
    if child.down_maps is None:
        raise ShapeError("level has no stored cross maps")
    outs = []
    for li, index_map in enumerate(child.down_maps):
        mask = child.down_masks[li] if child.down_masks is not None else None
        s = ccm_scores(ccm, li, child.positions, parent.positions, parent_feats, index_map, tape)
        outs.append(ccm_intra_set(ccm, li, s, parent_feats, index_map, tape, mask=mask))
    return ccm_level_aggregate(outs, ccm.level_weights, tape)


def transition_up(
    fuse: MlpParams,
    child: LevelStructure,
    coarse_feats: Var,
    skip_feats: Var,
    tape: Tape | None,
) -> Var:
    """Scatter coarse features to the parent level and fuse with the skip.

    Parent nodes covered by no sampled neighborhood receive the nearest
    sampled node's feature before concatenation.
    """
    if child.up_inverse is None:
        raise ShapeError("level has no stored inverse maps")
    scattered = ad.scatter_mean(coarse_feats, child.up_inverse, tape, fallback=child.up_fallback)
    cat = ad.concat_cols(scattered, skip_feats, tape)
    return mlp_forward(fuse, cat, tape)


# ---------------------------------------------------------------------------
# Full forward pass
# ---------------------------------------------------------------------------


@dataclass
class SegmentationResult:
    """Per-event class logits and the argmax labels, in input node order."""

    logits: np.ndarray
    pred: np.ndarray
    var: Var | None = None


def _forward_levels(model: ModelParams, levels: list[LevelStructure], tape: Tape | None) -> Var:
    depth = model.config.depth
    x = mlp_forward(model.stem, Var(levels[0].positions), tape)
    skips: list[Var] = []
    for l in range(depth):
        skips.append(x)
        x = transition_down(model.enc_down[l], levels[l + 1], levels[l], x, tape)
        x = mixer_block(model.enc_mix[l], levels[l + 1], x, tape)
    x = mixer_block(model.bottleneck, levels[depth], x, tape)
    for i, l in enumerate(range(depth - 1, -1, -1)):
        x = transition_up(model.dec_fuse[i], levels[l + 1], x, skips[l], tape)
        x = mixer_block(model.dec_mix[i], levels[l], x, tape)
    return mlp_forward(model.header, x, tape)


def forward(model: ModelParams, graph: EventGraph, tape: Tape | None = None) -> SegmentationResult:
    """Segment one event graph: per-event class logits in input order."""
    n = len(graph.positions)
    if n == 0:
        raise DataError("cannot run the network on an empty graph")
    order, _ = canonical_rank(graph.positions)
    levels = build_structure(graph.positions[order], model.config)
    logits_c = _forward_levels(model, levels, tape)
    logits = ad.permute_rows(logits_c, order, tape)
    pred = np.argmax(logits.value, axis=1)
    return SegmentationResult(logits=logits.value, pred=pred, var=logits)


# ---------------------------------------------------------------------------
# Batched forward (disjoint union of graphs)
# ---------------------------------------------------------------------------


def _pad_rows(rows: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    n, L = rows.shape
    mask = np.zeros((n, width), dtype=bool)
    mask[:, :L] = True
    if L == width:
        return rows, mask
    padded = np.zeros((n, width), dtype=np.int64)
    padded[:, :L] = rows
    return padded, mask


def _merge_maps(maps: list[IndexMap], masks_in, ref_offsets: list[int]) -> tuple[IndexMap, np.ndarray]:
    width = max(m.rows.shape[1] for m in maps)
    rows_parts, mask_parts = [], []
    for g, m in enumerate(maps):
        rows, mask = _pad_rows(m.rows, width)
        rows = rows + ref_offsets[g]
        if masks_in is not None and masks_in[g] is not None:
            mask = mask & np.pad(
                masks_in[g], ((0, 0), (0, width - masks_in[g].shape[1])), constant_values=False
            )
        rows_parts.append(rows)
        mask_parts.append(mask)
    merged = IndexMap(
        k=maps[0].k,
        domain_size=sum(m.domain_size for m in maps),
        rows=np.concatenate(rows_parts, axis=0),
    )
    return merged, np.concatenate(mask_parts, axis=0)


def _merge_inverse(invs: list[InverseIndexMap], value_offsets: list[int]) -> InverseIndexMap:
    starts_parts = [np.asarray([0], dtype=np.int64)]
    values_parts = []
    total = 0
    for inv, off in zip(invs, value_offsets):
        starts_parts.append(inv.starts[1:] + total)
        values_parts.append(inv.values + off)
        total += len(inv.values)
    return InverseIndexMap(
        domain_size=sum(inv.domain_size for inv in invs),
        starts=np.concatenate(starts_parts),
        values=np.concatenate(values_parts) if values_parts else np.empty(0, dtype=np.int64),
    )


def merge_structures(per_graph: list[list[LevelStructure]]) -> list[LevelStructure]:
    """Merge per-graph level chains into one disjoint-union chain.

    Index maps are padded to a common row width with masked entries that
    contribute exactly zero weight, so the merged pass reproduces the
    per-graph results (up to BLAS blocking differences).
    """
    n_levels = len(per_graph[0])
    merged: list[LevelStructure] = []
    for l in range(n_levels):
        structs = [g[l] for g in per_graph]
        offsets = np.cumsum([0] + [s.n_nodes for s in structs[:-1]]).tolist()
        positions = np.concatenate([s.positions for s in structs], axis=0)
        pyramid, masks = [], []
        for li in range(len(structs[0].pyramid)):
            m, mask = _merge_maps(
                [s.pyramid[li] for s in structs],
                [s.pyramid_masks[li] for s in structs],
                offsets,
            )
            pyramid.append(m)
            masks.append(mask)
        inter_inverse = _merge_inverse([s.inter_inverse for s in structs], offsets)
        level = LevelStructure(
            positions=positions,
            pyramid=pyramid,
            pyramid_masks=masks,
            inter_inverse=inter_inverse,
        )
        if structs[0].down_maps is not None:
            parent_structs = [g[l - 1] for g in per_graph]
            parent_offsets = np.cumsum([0] + [s.n_nodes for s in parent_structs[:-1]]).tolist()
            down_maps, down_masks = [], []
            for li in range(len(structs[0].down_maps)):
                m, mask = _merge_maps(
                    [s.down_maps[li] for s in structs],
                    [s.down_masks[li] if s.down_masks is not None else None for s in structs],
                    parent_offsets,
                )
                down_maps.append(m)
                down_masks.append(mask)
            level.down_maps = down_maps
            level.down_masks = down_masks
            level.up_inverse = _merge_inverse([s.up_inverse for s in structs], offsets)
            level.up_fallback = np.concatenate(
                [s.up_fallback + off for s, off in zip(structs, offsets)]
            )
            level.sample_indices = np.concatenate(
                [s.sample_indices + poff for s, poff in zip(structs, parent_offsets)]
            )
        merged.append(level)
    return merged


def forward_batch(model: ModelParams, graphs: list[EventGraph]) -> list[SegmentationResult]:
    """Run several graphs as one merged pass (inference only).

    Grouping amortizes per-op overhead; results match per-graph forward
    up to floating-point blocking differences.
    """
    if not graphs:
        return []
    orders = []
    chains = []
    for g in graphs:
        if len(g.positions) == 0:
            raise DataError("cannot run the network on an empty graph")
        order, _ = canonical_rank(g.positions)
        orders.append(order)
        chains.append(build_structure(g.positions[order], model.config))
    merged = merge_structures(chains)
    logits_all = _forward_levels(model, merged, None).value
    results = []
    start = 0
    for g, order in zip(graphs, orders):
        n = len(g.positions)
        canon = logits_all[start : start + n]
        logits = np.empty_like(canon)
        logits[order] = canon
        results.append(SegmentationResult(logits=logits, pred=np.argmax(logits, axis=1)))
        start += n
    return results
