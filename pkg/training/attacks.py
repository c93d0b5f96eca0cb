"""
    Attribute-specific adversarial counterfactuals (ASACs): FGSM and PGD
    perturbations that push the protected probe C(θ, φ) away from the true
    protected label. The target probe ρ is never evaluated here.
"""
from dataclasses import dataclass
from typing import Optional

import torch

from models import numerics
from models.numerics import GradTape
from utils.errors import ConfigError, NumericError

METHODS = ('fgsm', 'pgd')


def validate_attack_config(cfg):
    if cfg.method not in METHODS:
        raise ConfigError('attack method [%s] is not one of %s' % (cfg.method, METHODS))
    if not 0.0 <= cfg.eps <= 1.0:
        raise ConfigError('attack eps must lie in [0, 1], got %r' % cfg.eps)
    if cfg.pgd_steps < 1:
        raise ConfigError('pgd_steps must be >= 1, got %r' % cfg.pgd_steps)
    if cfg.method == 'pgd' and cfg.eps > 0 and cfg.pgd_step_size is not None and cfg.pgd_step_size <= 0:
        raise ConfigError('pgd_step_size must be > 0, got %r' % cfg.pgd_step_size)


def pgd_step_size(cfg, eps):
    return eps / 4.0 if cfg.pgd_step_size is None else cfg.pgd_step_size


@dataclass(frozen=True)
class Asac:
    x_adv: torch.Tensor
    source_index: int
    eps: float
    method: str
    score: Optional[float] = None


def signed_perturbation(grad, eps):
    """δ = eps * sign(grad), with sign(0) = 0."""
    return eps * torch.sign(grad)


def protected_input_gradient(model, x, a):
    """∇_x of the summed protected-head CE; each row equals its single-sample gradient."""
    with GradTape() as tape:
        x_leaf = tape.watch(x)
        logits = model.forward_protected(x_leaf)
        if logits.dim() == 1:
            loss = numerics.softmax_cross_entropy(logits, int(a))
        else:
            loss = numerics.softmax_cross_entropy(logits, a, reduction='sum')
        (g,) = tape.gradient(loss, [x_leaf])
    return g


def fgsm_perturb(model, x, a, eps):
    if eps == 0:
        return x.clone()
    g = protected_input_gradient(model, x, a)
    return torch.clamp(x + signed_perturbation(g, eps), 0.0, 1.0)


def pgd_perturb(model, x, a, eps, steps, step_size):
    if eps == 0:
        return x.clone()
    lower = x - eps
    upper = x + eps
    x_adv = x.clone()
    for _ in range(steps):
        g = protected_input_gradient(model, x_adv, a)
        x_adv = torch.clamp(x_adv + signed_perturbation(g, step_size), 0.0, 1.0)
        x_adv = torch.min(torch.max(x_adv, lower), upper)
        if float((x_adv - x).abs().max()) > eps + 1e-12:
            raise NumericError('PGD iterate left the eps-ball')
    return x_adv


def perturb(model, x, a, cfg, eps=None):
    """Dispatch on cfg.method; `eps` overrides cfg.eps."""
    eps = cfg.eps if eps is None else eps
    if cfg.method == 'fgsm':
        return fgsm_perturb(model, x, a, eps)
    if cfg.method == 'pgd':
        return pgd_perturb(model, x, a, eps, cfg.pgd_steps, pgd_step_size(cfg, eps))
    raise ConfigError('attack method [%s] is not one of %s' % (cfg.method, METHODS))


def fgsm(model, x, a, eps, source_index=0):
    if not 0.0 <= eps <= 1.0:
        raise ConfigError('eps must lie in [0, 1], got %r' % eps)
    return Asac(fgsm_perturb(model, x, a, eps), source_index, float(eps), 'fgsm')


def pgd(model, x, a, cfg, source_index=0):
    if cfg.method != 'pgd':
        raise ConfigError('pgd() needs an attack config with method=pgd')
    validate_attack_config(cfg)
    x_adv = pgd_perturb(model, x, a, cfg.eps, cfg.pgd_steps, pgd_step_size(cfg, cfg.eps))
    return Asac(x_adv, source_index, float(cfg.eps), 'pgd')


def make_asac_batch(model, x, a, cfg, eps=None, source_indices=None):
    """One Asac per row of `x`, in input order, each attacked with its own protected label."""
    if x.dim() != 2 or x.shape[0] == 0:
        raise ConfigError('make_asac_batch needs a non-empty (k, d) batch')
    validate_attack_config(cfg)
    eps = cfg.eps if eps is None else eps
    x_adv = perturb(model, x, a, cfg, eps)
    if source_indices is None:
        source_indices = range(x.shape[0])
    return [Asac(x_adv[i], int(src), float(eps), cfg.method) for i, src in enumerate(source_indices)]


def flip_rate(model, x, a, cfg, eps=None):
    """Share of correctly classified protected rows whose C prediction the attack flips."""
    with torch.no_grad():
        clean_pred = torch.argmax(model.forward_protected(x), dim=-1)
    correct = clean_pred == a
    if not bool(correct.any()):
        return 0.0
    x_adv = perturb(model, x[correct], a[correct], cfg, eps)
    with torch.no_grad():
        adv_pred = torch.argmax(model.forward_protected(x_adv), dim=-1)
    return float((adv_pred != a[correct]).double().mean())
