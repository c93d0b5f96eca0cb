"""Dense float64 kernels with reverse-mode gradients.

Tensors are plain ``torch.Tensor`` values of dtype float64. Gradients are
taken through a :class:`GradTape`, which records the leaves a computation is
differentiated against and delegates the reverse pass to torch autograd.
"""
import torch
import torch.nn.functional as F

from utils.errors import ClassIndexError, NumericError, ShapeError, TrackingError

DTYPE = torch.float64


def as_tensor(values, shape=None):
    t = torch.as_tensor(values, dtype=DTYPE)
    if shape is not None:
        if t.numel() != _prod(shape):
            raise ShapeError('cannot view %d values as shape %s' % (t.numel(), tuple(shape)))
        t = t.reshape(shape)
    check_finite(t, 'tensor')
    return t


def _prod(shape):
    n = 1
    for s in shape:
        n *= int(s)
    return n


def check_finite(t, what):
    if not bool(torch.isfinite(t).all()):
        raise NumericError('%s contains NaN or Inf' % what)
    return t


def matmul(a, b):
    if a.dim() != 2 or b.dim() != 2:
        raise ShapeError('matmul expects 2-D operands, got %s and %s' % (tuple(a.shape), tuple(b.shape)))
    if a.shape[1] != b.shape[0]:
        raise ShapeError('inner dimensions differ: %s x %s' % (tuple(a.shape), tuple(b.shape)))
    return torch.matmul(a, b)


def relu(x):
    # torch's relu backward is zero at x == 0
    return torch.relu(x)


def softmax(logits):
    return torch.softmax(logits, dim=-1)


def softmax_cross_entropy(logits, true_class, reduction='mean'):
    """-log softmax(logits)[true_class].

    `logits` is either a vector with an int class, or an (N, C) batch with a
    length-N class tensor; `reduction` applies to the batch form.
    """
    n_classes = logits.shape[-1]
    if logits.dim() == 1:
        cls = int(true_class)
        if not 0 <= cls < n_classes:
            raise ClassIndexError('class %d outside [0, %d)' % (cls, n_classes))
        return -torch.log_softmax(logits, dim=-1)[cls]
    if logits.dim() != 2:
        raise ShapeError('logits must be 1-D or 2-D, got %s' % (tuple(logits.shape),))
    target = torch.as_tensor(true_class, dtype=torch.long)
    if target.shape != (logits.shape[0],):
        raise ShapeError('expected %d class labels, got %s' % (logits.shape[0], tuple(target.shape)))
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= n_classes):
        raise ClassIndexError('class labels outside [0, %d)' % n_classes)
    return F.cross_entropy(logits, target, reduction=reduction)


class GradTape():
    """Records the leaves a computation will be differentiated against.

        with GradTape() as tape:
            x = tape.watch(x)
            loss = f(x)
        (gx,) = tape.gradient(loss, [x])
    """

    def __init__(self):
        self._watched = {}
        self._grad_mode = None

    def __enter__(self):
        self._grad_mode = torch.enable_grad()
        self._grad_mode.__enter__()
        return self

    def __exit__(self, *exc):
        self._grad_mode.__exit__(*exc)
        return False

    def watch(self, t):
        if isinstance(t, torch.nn.Parameter):
            if not t.requires_grad:
                raise TrackingError('parameter is frozen (requires_grad=False)')
            leaf = t
        else:
            leaf = t.detach().clone().requires_grad_(True)
        self._watched[id(leaf)] = leaf
        return leaf

    def watch_all(self, tensors):
        return [self.watch(t) for t in tensors]

    def gradient(self, output, wrt):
        if output.numel() != 1:
            raise ShapeError('gradient needs a scalar output, got shape %s' % (tuple(output.shape),))
        wrt = list(wrt)
        for t in wrt:
            if id(t) not in self._watched:
                raise TrackingError('tensor of shape %s is not recorded on this tape' % (tuple(t.shape),))
        if not output.requires_grad:
            return [torch.zeros_like(t) for t in wrt]
        grads = torch.autograd.grad(output.reshape(()), wrt, allow_unused=True)
        return [torch.zeros_like(t) if g is None else g for t, g in zip(wrt, grads)]


def grad(tape, output, wrt):
    return tape.gradient(output, wrt)


def finite_difference(fn, inputs, h=1e-5):
    """Central-difference gradient of the scalar `fn()` w.r.t. each input.

    The inputs are perturbed in place, one element at a time, and restored.
    """
    grads = []
    with torch.no_grad():
        for t in inputs:
            flat = t.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(fn())
                flat[i] = orig - h
                f_minus = float(fn())
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * h)
            grads.append(g.view_as(t))
    return grads


def max_relative_error(a, b, floor=1e-3):
    a = torch.as_tensor(a, dtype=DTYPE)
    b = torch.as_tensor(b, dtype=DTYPE)
    denom = torch.clamp(torch.maximum(a.abs(), b.abs()), min=floor)
    return float(((a - b).abs() / denom).max()) if a.numel() else 0.0
