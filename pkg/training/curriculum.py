"""In-batch curriculum over ASACs.

Every sample of a minibatch is paired with every noise magnitude, the
resulting ASACs are scored by how hard they are for the target classifier M,
and the k x l entries are ordered by that score. ASACs are built against the
protected probe φ; scores only read the target probe ρ.
"""
from dataclasses import dataclass

import numpy as np
import torch

from models import numerics
from training.attacks import Asac, perturb, validate_attack_config
from utils.errors import ConfigError

ORDERS = ('ascending', 'descending', 'random', 'none')


def validate_curriculum_config(cfg):
    eps = list(cfg.eps)
    if 0.0 not in eps:
        raise ConfigError('curriculum eps must include 0 (the clean minibatch), got %s' % eps)
    if len(set(eps)) != len(eps):
        raise ConfigError('curriculum eps values must be distinct, got %s' % eps)
    if any(not 0.0 <= e <= 1.0 for e in eps):
        raise ConfigError('curriculum eps values must lie in [0, 1], got %s' % eps)
    if cfg.order not in ORDERS:
        raise ConfigError('curriculum order [%s] is not one of %s' % (cfg.order, ORDERS))
    validate_attack_config(cfg.attack)


@dataclass(frozen=True)
class CurriculumEntry:
    asac: Asac
    score: float
    y: int
    eps_index: int
    dataset_index: int


class CurriculumBatch():
    """Ordered k x l stream of scored ASACs."""

    def __init__(self, entries, k, n_eps, order):
        self.entries = list(entries)
        self.k = k
        self.n_eps = n_eps
        self.order = order

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def scores(self):
        return [e.score for e in self.entries]

    def pairs(self):
        return [(e.asac.source_index, e.eps_index) for e in self.entries]

    def micro_batches(self, size):
        for start in range(0, len(self.entries), size):
            yield self.entries[start:start + size]

    def to_rows(self):
        """Debug dump rows: (source_idx, eps, score, rank)."""
        return [(e.asac.source_index, e.asac.eps, e.score, rank) for rank, e in enumerate(self.entries)]


def difficulty_scores(model, x_adv, y):
    """1 - softmax(M(x'))[y] per row."""
    with torch.no_grad():
        probs = numerics.softmax(model.forward_target(x_adv))
        p_true = probs.gather(-1, y.reshape(-1, 1)).reshape(-1)
    return torch.clamp(1.0 - p_true, 0.0, 1.0)


def difficulty_score(model, asac, y):
    with torch.no_grad():
        probs = numerics.softmax(model.forward_target(asac.x_adv))
    return min(1.0, max(0.0, 1.0 - float(probs[int(y)])))


def construct_curriculum(model, x, y, a, cfg, rng=None, dataset_indices=None):
    """Build, score and order the k x l ASACs of one minibatch.

    `rng` drives the random order; if omitted a generator seeded from
    cfg.seed is used.
    """
    if x.dim() != 2 or x.shape[0] == 0:
        raise ConfigError('construct_curriculum needs a non-empty (k, d) minibatch')
    validate_curriculum_config(cfg)
    k = x.shape[0]
    if dataset_indices is None:
        dataset_indices = np.arange(k)

    entries = []
    for j, eps in enumerate(cfg.eps):
        x_adv = x.clone() if eps == 0 else perturb(model, x, a, cfg.attack, eps)
        scores = difficulty_scores(model, x_adv, y)
        for i in range(k):
            asac = Asac(x_adv[i], i, float(eps), 'clean' if eps == 0 else cfg.attack.method, float(scores[i]))
            entries.append(CurriculumEntry(asac, float(scores[i]), int(y[i]), j, int(dataset_indices[i])))

    if cfg.order == 'ascending':
        entries.sort(key=lambda e: (e.score, e.asac.source_index, e.eps_index))
    elif cfg.order == 'descending':
        entries.sort(key=lambda e: (-e.score, e.asac.source_index, e.eps_index))
    elif cfg.order == 'random':
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        entries.sort(key=lambda e: (e.asac.source_index, e.eps_index))
        entries = [entries[i] for i in rng.permutation(len(entries))]
    else:
        entries.sort(key=lambda e: (e.asac.source_index, e.eps_index))
    return CurriculumBatch(entries, k, len(cfg.eps), cfg.order)
