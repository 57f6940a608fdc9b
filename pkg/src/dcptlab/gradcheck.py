"""Finite-difference audit of the full paired objective over random configurations.

The numeric side uses an independent reimplementation of the objective in
extended precision (``np.longdouble``). In float64 the central differences of
an O(1) objective carry about 1e-11 absolute error, which already exceeds the
1e-5 relative tolerance on gradient entries near 1e-6. Where ``longdouble`` is
plain double the check still runs, with that weaker resolution.

The clean distribution inside ``L_pred`` is a constant, so the reference
freezes it at the unperturbed parameters. Configurations whose ReLU
pre-activations sit within ``KINK_MARGIN`` of zero are redrawn: central
differences straddling a kink measure a mix of two slopes, not a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grad import PROB_FLOOR, finite_diff_check
from .head import HeadParams
from .training import DcptConfig, dual_forward, total_loss

TOLERANCE = 1e-5
DEFAULT_STEP = 1e-6
KINK_MARGIN = 1e-3
LAMBDA_COMBOS = ((False, False), (True, False), (False, True), (True, True))

_LD = np.longdouble


@dataclass
class GradcheckResult:
    max_error: float
    n_configs: int
    per_combo: dict = field(default_factory=dict)  # "lf=on,lp=off" -> worst error
    redraws: int = 0

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _combo_name(feat_on: bool, pred_on: bool) -> str:
    return f"lf={'on' if feat_on else 'off'},lp={'on' if pred_on else 'off'}"


def _draw(rng, dim, hidden, batch):
    # fan-in scaling keeps logits O(1); a saturated softmax makes most
    # gradient entries too small to say anything about
    params = HeadParams(rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, hidden)),
                        rng.normal(scale=0.3, size=hidden),
                        rng.normal(scale=1.5 / np.sqrt(hidden), size=(hidden, 2)),
                        rng.normal(scale=0.3, size=2))
    fc = rng.normal(size=(batch, dim))
    fd = fc + rng.normal(scale=0.5, size=(batch, dim))
    labels = rng.integers(0, 2, batch)
    return params, fc, fd, labels


def _well_posed(params, fc, fd) -> bool:
    for f in (fc, fd):
        pre = f @ params.W1 + params.b1
        if np.min(np.abs(pre)) < KINK_MARGIN:
            return False
        if np.min(np.linalg.norm(np.maximum(pre, 0.0), axis=1)) < KINK_MARGIN:
            return False
    return True


def _ld_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def reference_objective(cfg: DcptConfig, template: HeadParams, fc, fd, labels, frozen_logits_c):
    """Extended-precision objective of the flat parameter vector.

    Its plain gradient equals the stop-gradient gradient of the training loss,
    because the clean softmax inside ``L_pred`` is ``frozen_logits_c``.
    """
    d, h = template.dim, template.hidden
    fc, fd = np.asarray(fc, _LD), np.asarray(fd, _LD)
    onehot = np.eye(2, dtype=_LD)[np.asarray(labels)]
    pc = np.maximum(_ld_softmax(np.asarray(frozen_logits_c, _LD)), PROB_FLOOR)

    def f(theta):
        t = np.asarray(theta, _LD)
        w1 = t[: d * h].reshape(d, h)
        b1 = t[d * h : d * h + h]
        w2 = t[d * h + h : d * h + 3 * h].reshape(h, 2)
        b2 = t[d * h + 3 * h :]
        hc = np.maximum(fc @ w1 + b1, 0)
        hd = np.maximum(fd @ w1 + b1, 0)
        zc, zd = hc @ w2 + b2, hd @ w2 + b2
        total = _LD(0)
        for z in (zc, zd):
            lse = np.log(np.exp(z - z.max(1, keepdims=True)).sum(1)) + z.max(1)
            total += np.mean(lse - (z * onehot).sum(1))
        if cfg.lambda_f > 0:
            cos = (hc * hd).sum(1) / (np.sqrt((hc * hc).sum(1)) * np.sqrt((hd * hd).sum(1)))
            total += _LD(cfg.lambda_f) * np.mean(1 - cos)
        if cfg.lambda_p > 0:
            pd = np.maximum(_ld_softmax(zd), PROB_FLOOR)
            total += _LD(cfg.lambda_p) * np.mean(((pd - pc) * (np.log(pd) - np.log(pc))).sum(1))
        return total

    return f


def check_one(rng, dim, hidden, feat_on, pred_on, *, batch=3, h=DEFAULT_STEP, force_wrong=False):
    """Draw one configuration and return ``(relative_error, redraws)``."""
    redraws = 0
    while True:
        params, fc, fd, labels = _draw(rng, dim, hidden, batch)
        if _well_posed(params, fc, fd):
            break
        redraws += 1
    lf = float(rng.uniform(0.1, 2.0)) if feat_on else 0.0
    lp = float(rng.uniform(0.1, 2.0)) if pred_on else 0.0
    cfg = DcptConfig(lambda_f=lf, lambda_p=lp, hidden_dim=hidden)
    out = dual_forward(params, fc, fd)
    _, grads = total_loss(cfg, params, out, labels)
    analytic = grads.flat()
    if force_wrong:
        analytic = analytic * 1.01 + 1e-3
    f = reference_objective(cfg, params, fc, fd, labels, out.logits_c)
    return float(finite_diff_check(f, params.flat(), analytic, h=h)), redraws


def run_gradcheck(seed: int = 0, dim: int = 8, hidden: int = 4, n_configs: int = 128, *,
                  h: float = DEFAULT_STEP, force_wrong: bool = False) -> GradcheckResult:
    """Check ``n_configs`` configurations, cycling through every lambda on/off pair."""
    result = GradcheckResult(0.0, n_configs)
    for k in range(n_configs):
        feat_on, pred_on = LAMBDA_COMBOS[k % len(LAMBDA_COMBOS)]
        rng = np.random.default_rng([seed, k])
        err, redraws = check_one(rng, dim, hidden, feat_on, pred_on, h=h, force_wrong=force_wrong)
        name = _combo_name(feat_on, pred_on)
        result.per_combo[name] = max(result.per_combo.get(name, 0.0), err)
        result.max_error = max(result.max_error, err)
        result.redraws += redraws
    return result
