"""Loss, subset-cycled training, segmentation metrics, and harnesses.

Training follows a subset scheme: the dataset is split into L subsets
and iteration t draws one batch from subset (t mod L), so each subset is
visited once every L iterations. Metrics are per-event: plain accuracy,
per-class count-ratio accuracy (symmetric and literal variants), mean
IoU over classes present, one-vs-rest confusion counts, and a boundary
overlap analysis that reports how many misclassified events sit within a
small spatial radius of a ground-truth class boundary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import SgdState, Tape, Var, sgd_step
from .errors import ConfigError, DataError, NumericError
from .graph import EventGraph
from .model import ModelConfig, ModelParams, forward, forward_batch, init_model, parameters


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults follow the training recipe."""

    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 4
    subsets: int = 1
    iterations: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.subsets < 1:
            raise ConfigError(f"subset count must be >= 1, got {self.subsets}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")


def cross_entropy_loss(logits: Var, labels: np.ndarray, tape: Tape | None) -> Var:
    """Mean over events of -log softmax(logits)[label]."""
    v = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != v.shape[0]:
        raise DataError(f"{len(labels)} labels for {v.shape[0]} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= v.shape[1]):
        raise DataError(f"label {labels.max()} outside {v.shape[1]} classes")
    ad.assert_finite(v, "logits")
    n = v.shape[0]
    m = v.max(axis=1, keepdims=True)
    z = v - m
    e = np.exp(z)
    denom = e.sum(axis=1)
    losses = np.log(denom) - z[np.arange(n), labels]
    out = Var(losses.mean())
    if tape is not None:
        softmax = e / denom[:, None]
        def backward():
            if out.grad is None:
                return
            g = softmax.copy()
            g[np.arange(n), labels] -= 1.0
            g *= float(out.grad) / n
            ad._accum(logits, g)
        tape.record(backward)
    return out


def split_subsets(n_items: int, subsets: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous split into the requested subsets."""
    if subsets > n_items:
        raise ConfigError(f"{subsets} subsets for {n_items} graphs")
    order = np.random.default_rng(seed).permutation(n_items)
    return [np.asarray(chunk) for chunk in np.array_split(order, subsets)]


@dataclass
class TrainResult:
    model: ModelParams
    losses: list[tuple[int, float]] = field(default_factory=list)


def train(model: ModelParams, dataset: list[EventGraph], cfg: TrainConfig) -> TrainResult:
    """Subset-cycled SGD; deterministic for a fixed (model seed, cfg seed).

    Iteration t trains on one batch from subset (t mod L); batches rotate
    through each subset across visits. Per-graph losses are averaged
    across the batch before the optimizer step.
    """
    if not dataset:
        raise DataError("training needs at least one graph")
    n_classes = model.config.n_classes
    for i, g in enumerate(dataset):
        if g.labels is None:
            raise DataError(f"graph {i} has no labels")
        if g.labels.min() < 0 or g.labels.max() >= n_classes:
            raise DataError(f"graph {i} labels outside {n_classes} classes")

    groups = split_subsets(len(dataset), cfg.subsets, cfg.seed)
    cursors = [0] * cfg.subsets
    params = parameters(model)
    state = SgdState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    losses: list[tuple[int, float]] = []

    for t in range(cfg.iterations):
        s = t % cfg.subsets
        group = groups[s]
        take = min(cfg.batch_size, len(group))
        batch = [int(group[(cursors[s] + j) % len(group)]) for j in range(take)]
        cursors[s] = (cursors[s] + take) % len(group)

        for p in params:
            p.zero_grad()
        batch_loss = 0.0
        for gi in batch:
            graph = dataset[gi]
            tape = Tape()
            result = forward(model, graph, tape)
            loss = cross_entropy_loss(result.var, graph.labels, tape)
            tape.backward(loss, seed=1.0 / take)
            batch_loss += float(loss.value)
        batch_loss /= take
        if not np.isfinite(batch_loss):
            raise NumericError(f"non-finite loss at iteration {t}")
        sgd_step(params, state)
        losses.append((t, batch_loss))
    return TrainResult(model=model, losses=losses)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def event_accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    """Fraction of events whose predicted class equals ground truth."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        return 0.0
    return float(np.mean(pred == true))


def count_ratio_accuracy(
    pred: np.ndarray, true: np.ndarray, n_classes: int, mode: str = "symmetric"
) -> float:
    """Per-class count-ratio accuracy, averaged over classes.

    ``symmetric`` uses min(count_true, count_pred)/max(...), which stays
    in [0, 1]; ``literal`` uses count_true/count_pred with the
    denominator guarded by max(1, count_pred). Classes empty on both
    sides score 1.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size and (max(pred.max(), true.max()) >= n_classes or min(pred.min(), true.min()) < 0):
        raise DataError(f"labels outside {n_classes} classes")
    ct = np.bincount(true, minlength=n_classes).astype(float)
    cp = np.bincount(pred, minlength=n_classes).astype(float)
    both_zero = (ct == 0) & (cp == 0)
    if mode == "symmetric":
        ratios = np.minimum(ct, cp) / np.maximum(np.maximum(ct, cp), 1.0)
    elif mode == "literal":
        ratios = ct / np.maximum(cp, 1.0)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    ratios[both_zero] = 1.0
    return float(ratios.mean())


def confusion_counts(pred: np.ndarray, true: np.ndarray, n_classes: int) -> dict[int, dict[str, int]]:
    """One-vs-rest TP/FP/TN/FN per class; each class's counts sum to n."""
    n = len(true)
    out: dict[int, dict[str, int]] = {}
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        out[c] = {"tp": tp, "fp": fp, "tn": n - tp - fp - fn, "fn": fn}
    return out


def mean_iou(pred: np.ndarray, true: np.ndarray, n_classes: int) -> tuple[float, np.ndarray]:
    """Jaccard index per class and its mean over classes present.

    Classes absent from both prediction and ground truth are excluded
    from the mean; their per-class entry is NaN.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size and (max(pred.max(), true.max()) >= n_classes or min(pred.min(), true.min()) < 0):
        raise DataError(f"labels outside {n_classes} classes")
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        union = tp + fp + fn
        if union > 0:
            per_class[c] = tp / union
    present = ~np.isnan(per_class)
    miou = float(per_class[present].mean()) if present.any() else 0.0
    return miou, per_class


@dataclass
class BoundaryReport:
    """How prediction errors relate to ground-truth class boundaries."""

    n_events: int
    misclassified: int
    boundary_misclassified: int
    boundary_percent: float
    tp: int  # foreground predicted foreground
    fp: int  # background predicted foreground
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def boundary_mask(graph: EventGraph, radius: float) -> np.ndarray:
    """Events within ``radius`` (normalized units, spatial axes only) of an
    event carrying a different ground-truth label."""
    if radius <= 0:
        raise ConfigError(f"boundary radius must be > 0, got {radius}")
    if graph.labels is None:
        raise DataError("boundary analysis needs ground-truth labels")
    xy = graph.positions[:, :2]
    labels = graph.labels
    n = len(xy)
    r2 = radius * radius
    out = np.zeros(n, dtype=bool)
    block = 1024
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        d = xy[lo:hi, None, :] - xy[None, :, :]
        d2 = d[..., 0] ** 2 + d[..., 1] ** 2
        near = d2 <= r2
        differs = labels[lo:hi, None] != labels[None, :]
        out[lo:hi] = np.any(near & differs, axis=1)
    return out


def boundary_overlap_analysis(
    pred: np.ndarray,
    true: np.ndarray,
    graph: EventGraph,
    radius: float,
) -> BoundaryReport:
    """Boundary share of misclassified events plus binary fg/bg confusion.

    A misclassified event is any with pred != true; the binary confusion
    treats label 0 as background and everything else as foreground.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or len(pred) != len(graph.positions):
        raise DataError("prediction/truth/graph sizes differ")
    on_boundary = boundary_mask(graph, radius)
    mis = pred != true
    n_mis = int(mis.sum())
    n_boundary_mis = int((mis & on_boundary).sum())
    pct = 100.0 * n_boundary_mis / n_mis if n_mis else 0.0
    pred_fg = pred != 0
    true_fg = true != 0
    return BoundaryReport(
        n_events=len(pred),
        misclassified=n_mis,
        boundary_misclassified=n_boundary_mis,
        boundary_percent=pct,
        tp=int(np.sum(pred_fg & true_fg)),
        fp=int(np.sum(pred_fg & ~true_fg)),
        tn=int(np.sum(~pred_fg & ~true_fg)),
        fn=int(np.sum(~pred_fg & true_fg)),
    )


@dataclass
class MetricReport:
    """Aggregate segmentation metrics over a set of graphs."""

    n_events: int
    accuracy: float
    count_ratio_symmetric: float
    count_ratio_literal: float
    miou: float
    per_class_iou: list[float | None]
    confusion: dict[int, dict[str, int]]
    boundary: BoundaryReport | None = None

    def to_dict(self) -> dict:
        doc = {
            "n_events": self.n_events,
            "accuracy": self.accuracy,
            "count_ratio_symmetric": self.count_ratio_symmetric,
            "count_ratio_literal": self.count_ratio_literal,
            "miou": self.miou,
            "per_class_iou": self.per_class_iou,
            "confusion": {str(c): v for c, v in self.confusion.items()},
        }
        if self.boundary is not None:
            doc["boundary"] = self.boundary.to_dict()
        return doc

    def to_text(self) -> str:
        lines = [
            f"events             {self.n_events}",
            f"accuracy           {self.accuracy:.4f}",
            f"count-ratio (sym)  {self.count_ratio_symmetric:.4f}",
            f"count-ratio (lit)  {self.count_ratio_literal:.4f}",
            f"mIoU               {self.miou:.4f}",
            "class   IoU        tp       fp       tn       fn",
        ]
        for c, counts in self.confusion.items():
            iou = self.per_class_iou[c]
            iou_s = f"{iou:.4f}" if iou is not None else "  -   "
            lines.append(
                f"{c:>5}   {iou_s}  {counts['tp']:>7}  {counts['fp']:>7}"
                f"  {counts['tn']:>7}  {counts['fn']:>7}"
            )
        if self.boundary is not None:
            b = self.boundary
            lines.append(
                f"boundary: {b.boundary_misclassified}/{b.misclassified} misclassified "
                f"events on boundaries ({b.boundary_percent:.1f}%)"
            )
            lines.append(f"fg/bg: tp={b.tp} fp={b.fp} tn={b.tn} fn={b.fn}")
        return "\n".join(lines) + "\n"


def evaluate(
    model: ModelParams,
    dataset: list[EventGraph],
    boundary_radius: float | None = None,
    workers: int = 1,
) -> MetricReport:
    """Run the model over labeled graphs and aggregate all metrics.

    Evaluation is independent per graph; ``workers`` > 1 maps the forward
    passes over a thread pool (parameters are shared immutably).
    """
    if not dataset:
        raise DataError("evaluation needs at least one graph")
    for g in dataset:
        if g.labels is None:
            raise DataError("evaluation needs ground-truth labels")
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda g: forward(model, g), dataset))
    else:
        results = [forward(model, g) for g in dataset]
    preds, trues = [], []
    boundary_total = None
    for g, result in zip(dataset, results):
        preds.append(result.pred)
        trues.append(g.labels)
        if boundary_radius is not None:
            rep = boundary_overlap_analysis(result.pred, g.labels, g, boundary_radius)
            if boundary_total is None:
                boundary_total = rep
            else:
                boundary_total = BoundaryReport(
                    n_events=boundary_total.n_events + rep.n_events,
                    misclassified=boundary_total.misclassified + rep.misclassified,
                    boundary_misclassified=(
                        boundary_total.boundary_misclassified + rep.boundary_misclassified
                    ),
                    boundary_percent=0.0,
                    tp=boundary_total.tp + rep.tp,
                    fp=boundary_total.fp + rep.fp,
                    tn=boundary_total.tn + rep.tn,
                    fn=boundary_total.fn + rep.fn,
                )
    if boundary_total is not None and boundary_total.misclassified:
        boundary_total.boundary_percent = (
            100.0 * boundary_total.boundary_misclassified / boundary_total.misclassified
        )
    pred = np.concatenate(preds)
    true = np.concatenate(trues)
    n_classes = model.config.n_classes
    miou, per_class = mean_iou(pred, true, n_classes)
    return MetricReport(
        n_events=len(pred),
        accuracy=event_accuracy(pred, true),
        count_ratio_symmetric=count_ratio_accuracy(pred, true, n_classes, "symmetric"),
        count_ratio_literal=count_ratio_accuracy(pred, true, n_classes, "literal"),
        miou=miou,
        per_class_iou=[None if np.isnan(v) else float(v) for v in per_class],
        confusion=confusion_counts(pred, true, n_classes),
        boundary=boundary_total,
    )


# ---------------------------------------------------------------------------
# Ablation and timing harnesses
# ---------------------------------------------------------------------------

LAYER_SERIES_KS = (16, 32, 48, 64, 80, 96, 112)

K_SET_SERIES = {
    "set-1": (3, 3, 9, 12),
    "set-2": (8, 16, 24, 32),
    "set-3": (16, 32, 48, 64),
    "set-4": (25, 50, 75, 100),
    "set-5": (40, 80, 160, 240),
}


def ablate_ccm(
    base: ModelConfig,
    dataset: list[EventGraph],
    layer_counts: list[int] | None = None,
    k_sets: dict[str, tuple[int, ...]] | None = None,
    train_cfg: TrainConfig | None = None,
) -> list[dict]:
    """Train one model per mixing-layer configuration; one result row each.

    ``layer_counts`` selects prefixes of the (16, 32, ..., 112) series;
    ``k_sets`` are complete alternative k families. Accuracy is measured
    on the training set (the harness checks orderings, not benchmarks).
    """
    layer_counts = list(layer_counts) if layer_counts is not None else list(range(1, 8))
    k_sets = dict(k_sets) if k_sets is not None else dict(K_SET_SERIES)
    train_cfg = train_cfg or TrainConfig(iterations=30)
    rows: list[dict] = []

    def run(name: str, k_set: tuple[int, ...]) -> dict:
        cfg = ModelConfig(
            n_classes=base.n_classes,
            widths=base.widths,
            k_set=k_set,
            level_weights=None,
            reduction=base.reduction,
            activation=base.activation,
            include_self=base.include_self,
            knn_method=base.knn_method,
            seed=base.seed,
        )
        model = init_model(cfg)
        train(model, dataset, train_cfg)
        report = evaluate(model, dataset)
        return {
            "name": name,
            "k_set": list(k_set),
            "levels": len(k_set),
            "accuracy_percent": 100.0 * report.accuracy,
        }

    for n in layer_counts:
        if not 1 <= n <= len(LAYER_SERIES_KS):
            raise ConfigError(f"layer count {n} outside 1..{len(LAYER_SERIES_KS)}")
        rows.append(run(f"layers-{n}", LAYER_SERIES_KS[:n]))
    for name, ks in k_sets.items():
        rows.append(run(name, tuple(ks)))
    return rows


def ablation_table(rows: list[dict]) -> str:
    width = max(len(r["name"]) for r in rows)
    lines = [f"{'config':<{width}}  {'k set':<24}  acc%"]
    for r in rows:
        ks = " ".join(str(k) for k in r["k_set"])
        lines.append(f"{r['name']:<{width}}  {ks:<24}  {r['accuracy_percent']:.2f}")
    return "\n".join(lines) + "\n"


@dataclass
class TimingReport:
    """Sequential vs batch forward timing over the same graphs."""

    n_graphs: int
    repeats: int
    sequential_mean: float  # per-graph seconds
    sequential_std: float
    batch_mean: float  # per-graph seconds (one merged pass / n_graphs)
    batch_std: float

    def to_dict(self) -> dict:
        doc = dict(self.__dict__)
        doc["batch_per_graph_leq_sequential"] = self.batch_mean <= self.sequential_mean
        return doc

    def to_text(self) -> str:
        return (
            f"graphs: {self.n_graphs}  repeats: {self.repeats}\n"
            f"sequential per-graph: {self.sequential_mean:.6f} s "
            f"+- {self.sequential_std:.6f}\n"
            f"batch      per-graph: {self.batch_mean:.6f} s "
            f"+- {self.batch_std:.6f}\n"
        )


def bench_timing(
    model: ModelParams,
    graphs: list[EventGraph],
    repeats: int = 10,
    warmup: int = 1,
) -> TimingReport:
    """Time per-graph forwards vs one merged forward over the same graphs."""
    if not graphs:
        raise DataError("timing needs at least one graph")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    for _ in range(warmup):
        for g in graphs:
            forward(model, g)
        forward_batch(model, graphs)
    per_graph_times = []
    batch_times = []
    for _ in range(repeats):
        for g in graphs:
            t0 = time.perf_counter()
            forward(model, g)
            per_graph_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        forward_batch(model, graphs)
        batch_times.append((time.perf_counter() - t0) / len(graphs))
    seq = np.asarray(per_graph_times)
    bat = np.asarray(batch_times)
    return TimingReport(
        n_graphs=len(graphs),
        repeats=repeats,
        sequential_mean=float(seq.mean()),
        sequential_std=float(seq.std()),
        batch_mean=float(bat.mean()),
        batch_std=float(bat.std()),
    )
