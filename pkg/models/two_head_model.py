import copy

import torch

from .base_model import BaseModel
from . import networks


class TwoHeadModel(BaseModel):
    """Shared backbone θ with a target probe ρ (model M) and a protected probe φ (model C)."""

    def name(self):
        return 'TwoHeadModel'

    def initialize(self, opt, seed=0, generator=None):
        """`opt` is a model ConfigDict: input_dim, hidden, n_target, n_protected, init_type."""
        BaseModel.initialize(self, opt, seed)
        self.model_names = ['Backbone', 'Target', 'Protected']

        if generator is None:
            generator = torch.Generator().manual_seed(self.seed)
        self.netBackbone = networks.define_backbone(opt.input_dim, opt.hidden, opt.init_type, generator)
        feat = self.netBackbone.output_dim
        self.netTarget = networks.define_probe(feat, opt.n_target, opt.init_type, generator)
        self.netProtected = networks.define_probe(feat, opt.n_protected, opt.init_type, generator)

    def arch_dims(self):
        return [self.opt.input_dim, *self.opt.hidden, self.opt.n_target, self.opt.n_protected]

    def features(self, x):
        return self.netBackbone(x)

    def forward_target(self, x):
        return self.netTarget(self.features(x))

    def forward_protected(self, x):
        return self.netProtected(self.features(x))

    def forward_both(self, x):
        feats = self.features(x)
        return self.netTarget(feats), self.netProtected(feats)

    def target_parameters(self):
        """θ and ρ: what target training and fine-tuning update."""
        return list(self.netBackbone.parameters()) + list(self.netTarget.parameters())

    def protected_parameters(self):
        return list(self.netProtected.parameters())

    def is_trained(self, head):
        return head in self.trained_heads

    def copy(self):
        return copy.deepcopy(self)
