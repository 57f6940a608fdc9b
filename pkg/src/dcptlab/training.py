"""Paired-view training: view construction, dual forward, four-term loss, epoch loop.

The objective per sample is::

    CE(clean) + CE(degraded) + lambda_f * L_feat + lambda_p * L_pred

``L_feat`` is one minus the cosine similarity between the two views'
representations. ``L_pred`` is the symmetric KL between the two softmax
outputs, with the clean distribution held constant. All four terms are
batch means.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import head as head_mod
from .degrade import DegradationSpec, apply, sample_degradation
from .errors import ConfigError, NumericError, ParameterError
from .grad import AdamWState, adamw_step, cosine_distance_loss, softmax_ce, symmetric_kl_loss
from .head import HeadParams, head_backward, head_forward
from .toyworld import extract_features

log = logging.getLogger(__name__)

HIDDEN = "hidden"
BACKBONE = "backbone"

# separate generator streams per concern, derived from the run seed
_SHUFFLE_STREAM, _VIEW_STREAM, _INIT_STREAM = 1, 2, 3

# (name, lambda_f, lambda_p); the baseline also drops the degraded view
ABLATION_VARIANTS = (
    ("Baseline", 0.0, 0.0),
    ("feat-only", 0.5, 0.0),
    ("pred-only", 0.0, 0.1),
    ("both", 0.5, 0.1),
)


@dataclass(frozen=True)
class DcptConfig:
    lambda_f: float = 0.5
    lambda_p: float = 0.1
    p_deg: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    feat_consistency_point: str = HIDDEN
    hidden_dim: int = 256
    crop_size: int = 64

    def problems(self) -> list:
        """Every invalid field, as ``"name: reason"`` strings."""
        out = []

        def real(name, lo=None, hi=None):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                out.append(f"{name}: must be a finite number, got {v!r}")
            elif lo is not None and v < lo:
                out.append(f"{name}: must be >= {lo}, got {v!r}")
            elif hi is not None and v > hi:
                out.append(f"{name}: must be <= {hi}, got {v!r}")

        def integer(name, lo):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                out.append(f"{name}: must be an integer, got {v!r}")
            elif v < lo:
                out.append(f"{name}: must be >= {lo}, got {v!r}")

        real("lambda_f", 0.0)
        real("lambda_p", 0.0)
        real("p_deg", 0.0, 1.0)
        real("lr", 0.0)
        real("weight_decay", 0.0)
        integer("epochs", 0)
        integer("batch_size", 1)
        integer("seed", 0)
        integer("hidden_dim", 1)
        integer("crop_size", 16)
        if self.feat_consistency_point not in (HIDDEN, BACKBONE):
            out.append(f"feat_consistency_point: must be 'hidden' or 'backbone', "
                       f"got {self.feat_consistency_point!r}")
        return out

    def validated(self) -> "DcptConfig":
        bad = self.problems()
        if bad:
            raise ConfigError("invalid config: " + "; ".join(bad), bad)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DcptConfig":
        """Build a config from JSON-like data; absent fields keep their defaults."""
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError("unknown config fields: " + ", ".join(unknown),
                              [f"{k}: unknown field" for k in unknown])
        return cls(**d).validated()


@dataclass(frozen=True)
class LossBreakdown:
    ce_clean: float
    ce_deg: float
    l_feat: float
    l_pred: float
    total: float

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ViewPlan:
    """Random choices behind one (clean, degraded) pair."""

    top: int
    left: int
    flip: bool
    spec: DegradationSpec


def plan_views(rng: np.random.Generator, shape, cfg: DcptConfig) -> ViewPlan:
    h, w = shape[:2]
    c = cfg.crop_size
    if h < c or w < c:
        raise ParameterError(f"image {w}x{h} smaller than crop {c}x{c}")
    top = int(rng.integers(0, h - c + 1))
    left = int(rng.integers(0, w - c + 1))
    flip = bool(rng.random() < 0.5)
    return ViewPlan(top, left, flip, sample_degradation(rng, cfg.p_deg))


def render_views(img, plan: ViewPlan, crop: int):
    clean = img[plan.top : plan.top + crop, plan.left : plan.left + crop]
    if plan.flip:
        clean = clean[:, ::-1]
    clean = np.ascontiguousarray(clean)
    return clean, apply(plan.spec, clean)


def build_views(img, rng: np.random.Generator, cfg: DcptConfig):
    """Random crop + flip for the clean view; the degraded view derives from it.

    Returns:
        ``(clean, degraded, spec)``.
    """
    plan = plan_views(rng, np.shape(img), cfg)
    clean, degraded = render_views(img, plan, cfg.crop_size)
    return clean, degraded, plan.spec


@dataclass(frozen=True)
class DualOutput:
    feat_c: np.ndarray
    feat_d: np.ndarray
    hidden_c: np.ndarray
    logits_c: np.ndarray
    hidden_d: np.ndarray
    logits_d: np.ndarray


def dual_forward(params: HeadParams, feat_clean, feat_deg) -> DualOutput:
    """Run both views through the same head."""
    fc = np.asarray(feat_clean, dtype=np.float64)
    fd = np.asarray(feat_deg, dtype=np.float64)
    if fc.shape != fd.shape:
        raise ParameterError(f"clean features {fc.shape} vs degraded {fd.shape}")
    hc, lc = head_forward(params, fc)
    hd, ld = head_forward(params, fd)
    return DualOutput(fc, fd, hc, lc, hd, ld)


def _add(a: HeadParams, b: HeadParams) -> HeadParams:
    return HeadParams(a.W1 + b.W1, a.b1 + b.b1, a.W2 + b.W2, a.b2 + b.b2)


def total_loss(cfg: DcptConfig, params: HeadParams, out: DualOutput, labels, *,
               include_ce: bool = True):
    """Assemble the four-term objective and its gradient over all head parameters.

    ``include_ce=False`` drops both cross-entropy terms. It exists only so tests
    can isolate the consistency gradients.

    Returns:
        ``(LossBreakdown, grads)`` with ``grads`` a HeadParams.
    """
    labels = np.atleast_1d(np.asarray(labels))
    zeros = np.zeros_like(np.atleast_2d(out.logits_c))
    ce_c, g_lc = softmax_ce(out.logits_c, labels) if include_ce else (0.0, zeros)
    ce_d, g_ld = softmax_ce(out.logits_d, labels) if include_ce else (0.0, zeros)
    g_lc = np.atleast_2d(g_lc)
    g_ld = np.atleast_2d(g_ld)

    l_feat, g_hc, g_hd = 0.0, None, None
    if cfg.lambda_f > 0:
        if cfg.feat_consistency_point == HIDDEN:
            try:
                l_feat, g_hc, g_hd = cosine_distance_loss(out.hidden_c, out.hidden_d)
            except NumericError as exc:
                raise NumericError(f"feature consistency on hidden layer: {exc}") from None
            g_hc = cfg.lambda_f * np.atleast_2d(g_hc)
            g_hd = cfg.lambda_f * np.atleast_2d(g_hd)
        else:
            # frozen features carry no parameters: value only, no gradient
            l_feat, _, _ = cosine_distance_loss(out.feat_c, out.feat_d)

    l_pred = 0.0
    if cfg.lambda_p > 0:
        l_pred, g_pred = symmetric_kl_loss(out.logits_c, out.logits_d)
        g_ld = g_ld + cfg.lambda_p * np.atleast_2d(g_pred)

    grads_c, _ = head_backward(params, np.atleast_2d(out.feat_c), d_hidden=g_hc, d_logits=g_lc)
    grads_d, _ = head_backward(params, np.atleast_2d(out.feat_d), d_hidden=g_hd, d_logits=g_ld)

    total = ce_c + ce_d + cfg.lambda_f * l_feat + cfg.lambda_p * l_pred
    return LossBreakdown(ce_c, ce_d, l_feat, l_pred, total), _add(grads_c, grads_d)


def check_breakdown(b: LossBreakdown, cfg: DcptConfig) -> None:
    recomputed = b.ce_clean + b.ce_deg + cfg.lambda_f * b.l_feat + cfg.lambda_p * b.l_pred
    if not abs(recomputed - b.total) <= 1e-12 * max(1.0, abs(b.total)):
        raise NumericError(f"loss decomposition broken: {b.total!r} vs {recomputed!r}")
    if not math.isfinite(b.total):
        raise NumericError("non-finite training loss")


@dataclass
class EpochLog:
    epoch: int
    ce_clean: float
    ce_deg: float
    l_feat: float
    l_pred: float
    total: float
    train_acc: float

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    params: HeadParams
    initial_params: HeadParams
    log: list = field(default_factory=list)
    config: DcptConfig = field(default_factory=DcptConfig)


def baseline_config(cfg: DcptConfig) -> DcptConfig:
    """The unpaired reference run: no consistency terms and no degraded view.

    With ``p_deg = 0`` the degraded view equals the clean one, so the two CE
    terms coincide and training reduces to plain cross-entropy on clean views.
    Seed, optimizer and batch order stay identical to ``cfg``.
    """
    return dataclasses.replace(cfg, lambda_f=0.0, lambda_p=0.0, p_deg=0.0)


def variant_config(cfg: DcptConfig, name: str, lambda_f: float, lambda_p: float) -> DcptConfig:
    if name == "Baseline":
        return baseline_config(cfg)
    return dataclasses.replace(cfg, lambda_f=lambda_f, lambda_p=lambda_p)


def feature_dim(dataset, extractor, crop: int) -> int:
    img = dataset[0].image[:crop, :crop]
    return int(np.size(extractor(np.ascontiguousarray(img))))


def init_params(cfg: DcptConfig, dim: int) -> HeadParams:
    return head_mod.init(np.random.default_rng([cfg.seed, _INIT_STREAM]), dim, cfg.hidden_dim)


def train(cfg: DcptConfig, dataset, extractor=extract_features, *, cache_features: bool = True,
          on_epoch=None) -> TrainResult:
    """Train a head on ``dataset`` (a sequence of ToySample-like records).

    Each epoch shuffles with its own generator stream, so changing ``p_deg``
    leaves batch composition alone. ``cache_features`` memoizes extractor
    outputs per (sample, view plan); the extractor is pure, so this only
    saves time.
    """
    cfg = cfg.validated()
    if len(dataset) == 0:
        raise ConfigError("empty dataset", ["dataset: empty"])
    labels = np.array([s.label for s in dataset], dtype=np.int64)
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ConfigError("dataset must contain both classes", ["dataset: single class"])

    dim = feature_dim(dataset, extractor, cfg.crop_size)
    params = init_params(cfg, dim)
    initial = params
    state = AdamWState.zeros_like(params.as_dict())
    shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM])
    view_rng = np.random.default_rng([cfg.seed, _VIEW_STREAM])
    cache = {}

    def features(idx, plan):
        key = (idx, plan)
        if cache_features and key in cache:
            return cache[key]
        clean, degraded = render_views(dataset[idx].image, plan, cfg.crop_size)
        fc = extractor(clean)
        pair = (fc, fc if plan.spec.kind == "none" else extractor(degraded))
        if cache_features:
            cache[key] = pair
        return pair

    history = []
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(5)
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            fc, fd = [], []
            for i in idx:
                plan = plan_views(view_rng, dataset[i].image.shape, cfg)
                a, b = features(int(i), plan)
                fc.append(a)
                fd.append(b)
            out = dual_forward(params, np.stack(fc), np.stack(fd))
            y = labels[idx]
            breakdown, grads = total_loss(cfg, params, out, y)
            check_breakdown(breakdown, cfg)
            new, state = adamw_step(params.as_dict(), grads.as_dict(), state, cfg.lr,
                                    weight_decay=cfg.weight_decay)
            params = HeadParams.from_dict(new)
            sums += len(idx) * np.array([breakdown.ce_clean, breakdown.ce_deg, breakdown.l_feat,
                                         breakdown.l_pred, breakdown.total])
            correct += int(np.sum((out.logits_c[:, 1] >= out.logits_c[:, 0]) == (y == 1)))
        means = sums / n
        entry = EpochLog(epoch, *map(float, means), train_acc=correct / n)
        history.append(entry)
        log.info("epoch %d total %.4f acc %.4f", epoch, entry.total, entry.train_acc)
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(params, initial, history, cfg)


EPOCH_LOG_COLUMNS = ("epoch", "ce_clean", "ce_deg", "l_feat", "l_pred", "total", "train_acc")


def write_epoch_log(history, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EPOCH_LOG_COLUMNS)
        for e in history:
            row = e.as_row()
            w.writerow([row["epoch"]] + [repr(row[c]) for c in EPOCH_LOG_COLUMNS[1:]])


@dataclass
class AblationRow:
    variant: str
    lambda_f: float
    lambda_p: float
    p_deg: float
    seed: int
    report: object  # evaluation.GridReport
    initial_params: HeadParams = field(repr=False, default=None)

    @property
    def jpeg_average(self) -> float:
        return self.report.jpeg_average


def ablation_suite(dataset, eval_dataset, extractor=extract_features, base_cfg: DcptConfig = None,
                   conditions=("Clean", "J70", "J50", "J30"), **train_kwargs) -> list:
    """Train the four loss-component variants from one seed and score them.

    By default each variant is evaluated on the clean condition plus the three
    JPEG conditions; ``conditions`` must include those four.
    """
    from .evaluation import degradation_grid

    base_cfg = base_cfg or DcptConfig()
    rows = []
    for name, lf, lp in ABLATION_VARIANTS:
        cfg = variant_config(base_cfg, name, lf, lp)
        result = train(cfg, dataset, extractor, **train_kwargs)
        report = degradation_grid(result.params, eval_dataset, extractor,
                                  conditions=conditions,
                                  meta={"variant": name, "config": cfg.to_dict()})
        rows.append(AblationRow(name, lf, lp, cfg.p_deg, cfg.seed, report, result.initial_params))
    return rows
