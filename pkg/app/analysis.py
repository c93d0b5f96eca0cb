"""Robustness sweeps and Integrated Gradients for a trained two-head model."""
from dataclasses import dataclass
from typing import List

import numpy as np
import torch

from models import numerics
from models.numerics import GradTape
from training.attacks import perturb, validate_attack_config
from utils.errors import ConfigError, ShapeError
from utils.utils import write_csv


@dataclass(frozen=True)
class CurvePoint:
    eps: float
    p_target: float
    p_protected: float
    flipped_target: bool
    flipped_protected: bool


@dataclass(frozen=True)
class RobustnessCurve:
    points: List[CurvePoint]

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Attribution:
    values: torch.Tensor
    baseline: torch.Tensor
    steps: int
    target_class: int
    residual: float


def _true_class_probs(model, x, y, a):
    with torch.no_grad():
        logits_t, logits_p = model.forward_both(x)
    probs_t = numerics.softmax(logits_t)
    probs_p = numerics.softmax(logits_p)
    return (float(probs_t[int(y)]), float(probs_p[int(a)]),
            int(torch.argmax(logits_t)), int(torch.argmax(logits_p)))


def robustness_sweep(model, x, y, a, eps_grid, attack_cfg):
    """Attack C at each eps and record both heads' true-class probabilities.

    Flip flags compare each head's decision on the ASAC with its clean decision.
    """
    if len(eps_grid) == 0:
        raise ConfigError('robustness sweep needs a non-empty eps grid')
    validate_attack_config(attack_cfg)
    _, _, clean_t, clean_p = _true_class_probs(model, x, y, a)
    points = []
    for eps in sorted(float(e) for e in eps_grid):
        x_adv = x if eps == 0 else perturb(model, x, torch.tensor(int(a)), attack_cfg, eps)
        p_t, p_p, pred_t, pred_p = _true_class_probs(model, x_adv, y, a)
        points.append(CurvePoint(eps, p_t, p_p, pred_t != clean_t, pred_p != clean_p))
    return RobustnessCurve(points)


def target_logit(model, x, c):
    return model.forward_target(x)[..., c]


def integrated_gradients(model, x, c=None, baseline=None, steps=50):
    """Right-endpoint Riemann IG of the target-head logit for class `c`.

    IG_i = (x_i - x0_i) * mean_{t=1..m} dF_c/dx_i at x0 + (t/m)(x - x0).
    `c` defaults to the predicted class and `baseline` to zeros.
    """
    if steps < 1:
        raise ConfigError('IG needs steps >= 1, got %r' % steps)
    if baseline is None:
        baseline = torch.zeros_like(x)
    if baseline.shape != x.shape or x.dim() != 1:
        raise ShapeError('IG needs 1-D x and baseline of equal shape, got %s and %s'
                         % (tuple(x.shape), tuple(baseline.shape)))
    if c is None:
        with torch.no_grad():
            c = int(torch.argmax(model.forward_target(x)))
    diff = x - baseline
    alphas = torch.arange(1, steps + 1, dtype=x.dtype) / steps
    path = baseline.unsqueeze(0) + alphas.unsqueeze(1) * diff.unsqueeze(0)
    with GradTape() as tape:
        path_leaf = tape.watch(path)
        total = target_logit(model, path_leaf, c).sum()
        (grads,) = tape.gradient(total, [path_leaf])
    values = diff * grads.mean(dim=0)
    with torch.no_grad():
        delta = float(target_logit(model, x, c) - target_logit(model, baseline, c))
    residual = float(values.sum()) - delta
    return Attribution(values.detach(), baseline, steps, c, residual)


def region_mass(attribution, mask):
    """Share of total |IG| that falls inside the boolean `mask`."""
    mag = attribution.values.abs().numpy()
    total = mag.sum()
    return float(mag[np.asarray(mask)].sum() / total) if total > 0 else 0.0


CURVE_HEADER = ['sample', 'eps', 'p_target', 'p_protected', 'flipped_target', 'flipped_protected']


def write_curves_csv(path, curves, sample_ids, provenance):
    rows = []
    for sample, curve in zip(sample_ids, curves):
        for pt in curve.points:
            rows.append([sample, pt.eps, pt.p_target, pt.p_protected, int(pt.flipped_target),
                         int(pt.flipped_protected)] + list(provenance.values()))
    write_csv(path, CURVE_HEADER + list(provenance), rows)


def write_attributions_csv(path, attributions, sample_ids, provenance):
    """One row per sample: id, class, steps, residual, ig_0..ig_{d-1}."""
    d = attributions[0].values.numel() if attributions else 0
    header = ['sample', 'class', 'steps', 'residual'] + ['ig%d' % i for i in range(d)] + list(provenance)
    rows = []
    for sample, attr in zip(sample_ids, attributions):
        rows.append([sample, attr.target_class, attr.steps, attr.residual]
                    + [float(v) for v in attr.values] + list(provenance.values()))
    write_csv(path, header, rows)


def write_heatmap_text(path, attributions, sample_ids, grid, provenance):
    """Grid-shaped text dump of each attribution, one block per sample."""
    with open(path, 'w') as f:
        f.write('# %s\n' % ' '.join('%s=%s' % kv for kv in provenance.items()))
        for sample, attr in zip(sample_ids, attributions):
            f.write('sample %s class %d residual %r\n' % (sample, attr.target_class, attr.residual))
            values = attr.values.numpy().reshape(grid, grid)
            for row in values:
                f.write(' '.join('%+.6e' % v for v in row) + '\n')
            f.write('\n')
