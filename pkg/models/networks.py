import math

import torch
import torch.nn as nn

from models import numerics
from utils.errors import ConfigError, ShapeError

###############################################################################
# Helper Functions
###############################################################################


def init_weights(net, init_type='uniform', generator=None):
    """Initialise every Affine layer of `net` in place.

    uniform: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    zeros:   all parameters zero.
    """
    def init_func(m):
        if not isinstance(m, Affine):
            return
        if init_type == 'uniform':
            bound = 1.0 / math.sqrt(m.in_features)
            m.weight.uniform_(-bound, bound, generator=generator)
        elif init_type == 'zeros':
            m.weight.zero_()
        else:
            raise ConfigError('initialization method [%s] is not implemented' % init_type)
        m.bias.zero_()

    with torch.no_grad():
        net.apply(init_func)


def define_backbone(input_dim, hidden, init_type='uniform', generator=None):
    net = Backbone(input_dim, hidden)
    init_weights(net, init_type, generator)
    return net


def define_probe(in_features, n_classes, init_type='uniform', generator=None):
    net = LinearProbe(in_features, n_classes)
    init_weights(net, init_type, generator)
    return net


##############################################################################
# Classes
##############################################################################


class Affine(nn.Module):
    """x @ W + b with W stored as (in_features, out_features)."""

    def __init__(self, in_features, out_features):
        super(Affine, self).__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.zeros(in_features, out_features, dtype=numerics.DTYPE))
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=numerics.DTYPE))

    def forward(self, x):
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.in_features:
            raise ShapeError('expected %d input features, got %d' % (self.in_features, x.shape[-1]))
        out = numerics.matmul(x, self.weight) + self.bias
        return out.squeeze(0) if squeeze else out


class Backbone(nn.Module):
    """Stack of affine+ReLU layers. No hidden layers means identity features."""

    def __init__(self, input_dim, hidden):
        super(Backbone, self).__init__()
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        dims = (input_dim,) + self.hidden
        self.layers = nn.ModuleList([Affine(dims[i], dims[i + 1]) for i in range(len(self.hidden))])
        self.output_dim = dims[-1]

    def forward(self, x):
        if x.shape[-1] != self.input_dim:
            raise ShapeError('expected %d input features, got %d' % (self.input_dim, x.shape[-1]))
        for layer in self.layers:
            x = numerics.relu(layer(x))
        return x


class LinearProbe(nn.Module):
    def __init__(self, in_features, n_classes):
        super(LinearProbe, self).__init__()
        self.affine = Affine(in_features, n_classes)

    def forward(self, features):
        return self.affine(features)
