"""
Accuracy and group-fairness gaps of a binary predictor w.r.t. a binary protected attribute.

All metrics are computed from the 8-cell table counts[y, a, y_hat], so a
report can always be recomputed from its own counts.
"""
import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch

from utils.errors import ConfigError, UndefinedMetricError

METRICS = ('ddp', 'deo', 'deop')


class PredictionLog():
    """Rows of (y_hat, y, a), all binary."""

    def __init__(self, y_hat, y, a):
        self.y_hat = np.asarray(y_hat, dtype=np.int64).reshape(-1)
        self.y = np.asarray(y, dtype=np.int64).reshape(-1)
        self.a = np.asarray(a, dtype=np.int64).reshape(-1)
        if not len(self.y_hat) == len(self.y) == len(self.a):
            raise ConfigError('prediction log columns differ in length')
        for name in ('y_hat', 'y', 'a'):
            col = getattr(self, name)
            if col.size and not np.isin(col, (0, 1)).all():
                raise ConfigError('prediction log column %s is not binary' % name)

    def __len__(self):
        return len(self.y)


def stratified_counts(log):
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    np.add.at(counts, (log.y, log.a, log.y_hat), 1)
    return counts


def _positive_rate(counts, metric, y=None, a=0):
    """P(y_hat = 1 | [Y = y,] A = a) from the count table."""
    cells = counts[:, a, :] if y is None else counts[y, a, :]
    total = int(cells.sum())
    if total == 0:
        stratum = 'A=%d' % a if y is None else 'Y=%d,A=%d' % (y, a)
        raise UndefinedMetricError(metric, stratum)
    return float(cells[..., 1].sum()) / total


def ddp_from_counts(counts):
    return abs(_positive_rate(counts, 'DDP', a=0) - _positive_rate(counts, 'DDP', a=1))


def tpr_gap(counts, metric='DEOp'):
    return abs(_positive_rate(counts, metric, y=1, a=0) - _positive_rate(counts, metric, y=1, a=1))


def fpr_gap(counts, metric='DEO'):
    return abs(_positive_rate(counts, metric, y=0, a=0) - _positive_rate(counts, metric, y=0, a=1))


def deo_from_counts(counts):
    return (tpr_gap(counts, 'DEO') + fpr_gap(counts, 'DEO')) / 2.0


def deop_from_counts(counts):
    return tpr_gap(counts, 'DEOp')


def ddp(log):
    return ddp_from_counts(stratified_counts(log))


def deo(log):
    return deo_from_counts(stratified_counts(log))


def deop(log):
    return deop_from_counts(stratified_counts(log))


def accuracy_from_counts(counts):
    total = int(counts.sum())
    if total == 0:
        raise UndefinedMetricError('ACC', 'all rows')
    correct = int(counts[0, :, 0].sum() + counts[1, :, 1].sum())
    return correct / total


_FROM_COUNTS = {'ddp': ddp_from_counts, 'deo': deo_from_counts, 'deop': deop_from_counts}


@dataclass
class FairnessReport:
    acc: float
    ddp: Optional[float]
    deo: Optional[float]
    deop: Optional[float]
    counts: np.ndarray
    status: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts, strict=False):
        counts = np.asarray(counts, dtype=np.int64).reshape(2, 2, 2)
        values, status = {}, {}
        for name in METRICS:
            try:
                values[name] = _FROM_COUNTS[name](counts)
                status[name] = 'ok'
            except UndefinedMetricError as e:
                if strict:
                    raise
                values[name] = None
                status[name] = str(e)
        return cls(acc=accuracy_from_counts(counts), counts=counts, status=status, **values)

    def counts_table(self):
        """The 8 cells as a list of {y, a, y_hat, count} rows."""
        return [{'y': y, 'a': a, 'y_hat': p, 'count': int(self.counts[y, a, p])}
                for y in (0, 1) for a in (0, 1) for p in (0, 1)]

    def to_dict(self):
        return {'metrics': {'acc': self.acc, 'ddp': self.ddp, 'deo': self.deo, 'deop': self.deop},
                'status': dict(self.status),
                'counts': self.counts_table()}

    def to_json(self, **provenance):
        payload = self.to_dict()
        payload.update(provenance)
        return json.dumps(payload, indent=2, sort_keys=True) + '\n'


def csv_header():
    return ['acc', 'ddp', 'deo', 'deop']


def csv_row(report):
    return [report.acc, report.ddp, report.deo, report.deop]


def predict(model, x, head='target'):
    """Argmax decisions; ties go to class 0 (torch.argmax returns the first maximum)."""
    with torch.no_grad():
        logits = model.forward_target(x) if head == 'target' else model.forward_protected(x)
    return torch.argmax(logits, dim=-1)


def prediction_log(model, dataset):
    x, y, a = dataset.tensors()
    return PredictionLog(predict(model, x).numpy(), y.numpy(), a.numpy())


def evaluate(model, dataset, strict=False):
    if len(dataset) == 0:
        raise ConfigError('cannot evaluate on an empty dataset')
    return FairnessReport.from_counts(stratified_counts(prediction_log(model, dataset)), strict=strict)


def protected_accuracy(model, dataset):
    x, _, a = dataset.tensors()
    return float((predict(model, x, head='protected') == a).double().mean())
