import torch
from torch.nn.utils import clip_grad_norm_

from utils.errors import ConfigError, ShapeError


class ClippedAdam():
    """Adam with global-norm gradient clipping applied before every update.

    Moments live in the wrapped ``torch.optim.Adam`` state (``exp_avg``,
    ``exp_avg_sq``); ``step_count`` counts completed updates.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=1.0):
        self.params = list(params)
        if not self.params:
            raise ConfigError('optimizer needs at least one parameter')
        if lr < 0 or clip <= 0:
            raise ConfigError('lr must be >= 0 and clip > 0 (got lr=%r, clip=%r)' % (lr, clip))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self.step_count = 0
        # single-tensor path so the update order is fixed
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=(beta1, beta2), eps=eps, foreach=False)

    @classmethod
    def from_config(cls, params, cfg):
        return cls(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps, clip=cfg.clip)

    def moments(self, param):
        state = self.optimizer.state.get(param, {})
        return state.get('exp_avg'), state.get('exp_avg_sq')


def adam_step(state, params, grads):
    """Clip `grads` to global norm `state.clip`, then apply one Adam update in place.

    Returns (params, state, pre-clip gradient norm).
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.params):
        raise ShapeError('got %d params, %d grads for an optimizer over %d params'
                         % (len(params), len(grads), len(state.params)))
    for p, q, g in zip(params, state.params, grads):
        if p is not q:
            raise ShapeError('parameter does not belong to this optimizer state')
        if p.shape != g.shape:
            raise ShapeError('gradient shape %s does not match parameter %s' % (tuple(g.shape), tuple(p.shape)))
        p.grad = g.detach().clone()
    total_norm = clip_grad_norm_(params, max_norm=state.clip, foreach=False)
    state.optimizer.step()
    state.step_count += 1
    # p.grad keeps the clipped gradient until the next step
    return params, state, float(total_norm)
