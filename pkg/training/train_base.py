import logging

import numpy as np
import torch
from tqdm import tqdm

from models import numerics
from models.numerics import GradTape
from models.optim import ClippedAdam, adam_step
from utils.errors import ConfigError
from utils.utils import stream_seed

log = logging.getLogger(__name__)

HEADS = ('target', 'protected', 'joint')


def iterate_minibatches(n, batch_size, rng):
    """Shuffled index chunks covering range(n) exactly once."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def shuffle_rng(seed):
    return np.random.default_rng(stream_seed(seed, 'shuffle'))


def head_logits(model, head, x):
    return model.forward_protected(x) if head == 'protected' else model.forward_target(x)


def accuracy(model, head, x, labels):
    with torch.no_grad():
        pred = torch.argmax(head_logits(model, head, x), dim=-1)
    return float((pred == labels).double().mean())


def train_probe(model, dataset, head, cfg, progress=False):
    """Minimise the CE of one head and return (trained copy, per-epoch history).

    head=target updates θ and ρ. head=protected updates φ only, with θ frozen,
    so a previously trained M is left untouched. head=joint updates θ, ρ and φ
    on CE(ρ, y) + cfg.protected_weight * CE(φ, a), so the shared backbone keeps
    the protected evidence C is later refit on.
    """
    if head not in HEADS:
        raise ConfigError('head must be one of %s, got %r' % (HEADS, head))
    if len(dataset) == 0:
        raise ConfigError('cannot train on an empty dataset')
    if cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError('batch_size must be >= 1 and epochs >= 0')

    model = model.copy()
    if head == 'target':
        model.set_requires_grad(model.netProtected, False)
        model.set_requires_grad([model.netBackbone, model.netTarget], True)
        params = model.target_parameters()
    elif head == 'protected':
        model.set_requires_grad([model.netBackbone, model.netTarget], False)
        model.set_requires_grad(model.netProtected, True)
        params = model.protected_parameters()
    else:
        model.set_requires_grad([model.netBackbone, model.netTarget, model.netProtected], True)
        params = model.target_parameters() + model.protected_parameters()

    state = ClippedAdam.from_config(params, cfg)
    rng = shuffle_rng(cfg.seed)
    x_all, y_all, a_all = dataset.tensors()
    labels_all = a_all if head == 'protected' else y_all

    history = []
    for epoch in tqdm(range(1, cfg.epochs + 1), desc='train %s' % head, disable=not progress):
        batch_losses = []
        for idx in iterate_minibatches(len(dataset), cfg.batch_size, rng):
            x = x_all[idx]
            with GradTape() as tape:
                watched = tape.watch_all(params)
                if head == 'joint':
                    target_logits, protected_logits = model.forward_both(x)
                    loss = (numerics.softmax_cross_entropy(target_logits, y_all[idx])
                            + cfg.protected_weight * numerics.softmax_cross_entropy(protected_logits, a_all[idx]))
                else:
                    loss = numerics.softmax_cross_entropy(head_logits(model, head, x), labels_all[idx])
                grads = tape.gradient(loss, watched)
            numerics.check_finite(loss.detach(), '%s loss' % head)
            adam_step(state, params, grads)
            batch_losses.append(loss.detach().item())
        row = {'epoch': epoch, 'mean_loss': float(np.mean(batch_losses)),
               'acc': accuracy(model, head, x_all, labels_all)}
        history.append(row)
        log.debug('(epoch: %d, head: %s) mean_loss: %.4f acc: %.4f', epoch, head, row['mean_loss'], row['acc'])

    if cfg.epochs > 0:
        model.trained_heads.update(('target', 'protected') if head == 'joint' else (head,))
    model.set_requires_grad([model.netBackbone, model.netTarget, model.netProtected], True)
    return model, history


def train_base(model, dataset, cfg, progress=False):
    """Base stage: backbone and target probe, then φ refit on the frozen backbone.

    The first pass is `joint` when cfg.protected_weight > 0 and plain `target`
    otherwise. Returns (model, [(head, history), ...]) in training order.
    """
    first = 'joint' if cfg.protected_weight > 0 else 'target'
    model, first_history = train_probe(model, dataset, first, cfg, progress=progress)
    model, protected_history = train_probe(model, dataset, 'protected', cfg, progress=progress)
    return model, [(first, first_history), ('protected', protected_history)]
