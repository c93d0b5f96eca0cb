import logging

import numpy as np
import torch
from tqdm import tqdm

from models import numerics
from models.numerics import GradTape
from models.optim import ClippedAdam, adam_step
from training.curriculum import construct_curriculum, validate_curriculum_config
from training.train_base import iterate_minibatches, shuffle_rng
from utils.errors import ConfigError, PipelineOrderError
from utils.fairness import evaluate
from utils.utils import stream_seed

log = logging.getLogger(__name__)


def validate_finetune_config(cfg):
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError('finetune.alpha must lie in [0, 1], got %r' % cfg.alpha)
    if cfg.epochs < 0 or cfg.batch_size < 1:
        raise ConfigError('finetune.epochs must be >= 0 and batch_size >= 1')
    if cfg.micro_batch_size is not None and cfg.micro_batch_size < 1:
        raise ConfigError('finetune.micro_batch_size must be >= 1, got %r' % cfg.micro_batch_size)
    validate_curriculum_config(cfg.curriculum)


def combined_loss(model, clean_x, adv_x, y, alpha):
    """α·CE(M(clean_x), y) + (1 − α)·CE(M(adv_x), y), CE averaged over the rows."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError('alpha must lie in [0, 1], got %r' % alpha)
    if clean_x.dim() == 1:
        clean_ce = numerics.softmax_cross_entropy(model.forward_target(clean_x), int(y))
        adv_ce = numerics.softmax_cross_entropy(model.forward_target(adv_x), int(y))
    else:
        clean_ce = numerics.softmax_cross_entropy(model.forward_target(clean_x), y)
        adv_ce = numerics.softmax_cross_entropy(model.forward_target(adv_x), y)
    return alpha * clean_ce + (1.0 - alpha) * adv_ce


def finetune(model, train, cfg, eval_set=None, on_epoch_end=None, on_curriculum=None, progress=False):
    """Fine-tune θ and ρ on curriculum-ordered ASACs; φ stays frozen.

    Returns (fine-tuned copy, per-epoch history). History rows carry
    epoch, mean_loss and the fairness metrics of `eval_set` (train if None).
    `on_curriculum(epoch, step, stream)` sees every ordered minibatch before
    it is consumed.
    """
    validate_finetune_config(cfg)
    for head in ('target', 'protected'):
        if not model.is_trained(head):
            raise PipelineOrderError('fine-tuning needs a trained %s head; run train-base first' % head)
    if len(train) == 0:
        raise ConfigError('cannot fine-tune on an empty dataset')

    model = model.copy()
    model.set_requires_grad(model.netProtected, False)
    params = model.target_parameters()
    state = ClippedAdam.from_config(params, cfg)
    rng = shuffle_rng(cfg.seed)
    curriculum_rng = np.random.default_rng(stream_seed(cfg.curriculum.seed, 'curriculum-random'))
    micro = cfg.micro_batch_size or cfg.batch_size
    x_all, y_all, a_all = train.tensors()
    eval_set = train if eval_set is None else eval_set

    history = []
    for epoch in tqdm(range(1, cfg.epochs + 1), desc='finetune', disable=not progress):
        step_losses = []
        for step, idx in enumerate(iterate_minibatches(len(train), cfg.batch_size, rng)):
            x, y, a = x_all[idx], y_all[idx], a_all[idx]
            stream = construct_curriculum(model, x, y, a, cfg.curriculum, rng=curriculum_rng, dataset_indices=idx)
            if on_curriculum is not None:
                on_curriculum(epoch, step, stream)
            for chunk in stream.micro_batches(micro):
                # reduce in (source, eps) order so the loss does not depend on the curriculum order
                chunk = sorted(chunk, key=lambda e: (e.asac.source_index, e.eps_index))
                src = torch.tensor([e.asac.source_index for e in chunk], dtype=torch.long)
                adv_x = torch.stack([e.asac.x_adv for e in chunk])
                with GradTape() as tape:
                    watched = tape.watch_all(params)
                    loss = combined_loss(model, x[src], adv_x, y[src], cfg.alpha)
                    grads = tape.gradient(loss, watched)
                numerics.check_finite(loss.detach(), 'fine-tuning loss')
                adam_step(state, params, grads)
                step_losses.append(loss.detach().item())

        report = evaluate(model, eval_set)
        row = {'epoch': epoch, 'mean_loss': float(np.mean(step_losses)), 'acc': report.acc,
               'ddp': report.ddp, 'deo': report.deo, 'deop': report.deop}
        history.append(row)
        log.info('(epoch: %d) mean_loss: %.4f acc: %.4f ddp: %s deo: %s deop: %s', epoch, row['mean_loss'],
                 row['acc'], _fmt(row['ddp']), _fmt(row['deo']), _fmt(row['deop']))
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, row)

    model.set_requires_grad(model.netProtected, True)
    return model, history


def _fmt(value):
    return 'n/a' if value is None else '%.4f' % value
