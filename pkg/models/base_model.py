import logging
import os
import struct

import numpy as np
import torch

from utils.errors import FormatError, MissingArtifactError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'ASACCKPT'
CHECKPOINT_VERSION = 1
HEAD_FLAGS = {'target': 1, 'protected': 2}


class BaseModel():

    def name(self):
        return 'BaseModel'

    def initialize(self, opt, seed=0):
        self.opt = opt
        self.seed = int(seed)
        self.trained_heads = set()
        self.model_names = []

    def arch_dims(self):
        raise NotImplementedError

    def parameters(self):
        """All parameters, nets in `model_names` order, declaration order within a net."""
        params = []
        for name in self.model_names:
            params.extend(getattr(self, 'net' + name).parameters())
        return params

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    def print_networks(self, verbose):
        log.info('---------- Networks initialized -------------')
        for name in self.model_names:
            net = getattr(self, 'net' + name)
            num_params = sum(p.numel() for p in net.parameters())
            if verbose:
                log.info('%s', net)
            log.info('[Network %s] Total number of parameters : %d', name, num_params)
        log.info('-----------------------------------------------')

    # set requires_grad=False to freeze a net
    def set_requires_grad(self, nets, requires_grad=False):
        if not isinstance(nets, list):
            nets = [nets]
        for net in nets:
            if net is not None:
                for param in net.parameters():
                    param.requires_grad = requires_grad

    def save_networks(self, path, config_digest=b''):
        flags = 0
        for head in self.trained_heads:
            flags |= HEAD_FLAGS[head]
        with torch.no_grad():
            values = [p.detach().reshape(-1).numpy() for p in self.parameters()]
        write_checkpoint(path, self.arch_dims(), self.seed, flags, config_digest,
                         np.concatenate(values) if values else np.zeros(0))

    def load_networks(self, path):
        ckpt = read_checkpoint(path, expected_dims=self.arch_dims())
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(ckpt['params'][offset:offset + n].copy()).reshape(p.shape))
                offset += n
        self.seed = ckpt['seed']
        self.trained_heads = {h for h, bit in HEAD_FLAGS.items() if ckpt['flags'] & bit}
        return ckpt


def write_checkpoint(path, dims, seed, flags, config_digest, params):
    """Serialize parameters to `path` atomically (write then rename)."""
    digest = bytes(config_digest)[:32].ljust(32, b'\0')
    header = CHECKPOINT_MAGIC
    header += struct.pack('<II', CHECKPOINT_VERSION, len(dims))
    header += struct.pack('<%dI' % len(dims), *dims)
    header += struct.pack('<qI', int(seed), int(flags))
    header += digest
    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as f:
        f.write(header)
        f.write(np.ascontiguousarray(params, dtype='<f8').tobytes())
    os.replace(tmp_path, path)


def read_checkpoint(path, expected_dims=None):
    if not os.path.isfile(path):
        raise MissingArtifactError('checkpoint not found: %s' % path)
    with open(path, 'rb') as f:
        blob = f.read()

    def take(offset, size, what):
        if offset + size > len(blob):
            raise FormatError('checkpoint truncated while reading %s' % what, offset=len(blob))
        return blob[offset:offset + size]

    magic = take(0, len(CHECKPOINT_MAGIC), 'magic')
    if magic != CHECKPOINT_MAGIC:
        raise FormatError('bad checkpoint magic %r, expected %r' % (magic, CHECKPOINT_MAGIC), offset=0)
    offset = len(CHECKPOINT_MAGIC)
    version, ndims = struct.unpack('<II', take(offset, 8, 'version'))
    if version != CHECKPOINT_VERSION:
        raise FormatError('unsupported checkpoint version %d' % version, offset=offset)
    if ndims < 3:
        raise FormatError('checkpoint lists %d dims, need input, n_target and n_protected at least' % ndims,
                          offset=offset + 4)
    offset += 8
    dims = list(struct.unpack('<%dI' % ndims, take(offset, 4 * ndims, 'dims')))
    if expected_dims is not None and dims != list(expected_dims):
        raise FormatError('checkpoint architecture %s does not match %s' % (dims, list(expected_dims)), offset=offset)
    offset += 4 * ndims
    seed, flags = struct.unpack('<qI', take(offset, 12, 'seed'))
    offset += 12
    digest = take(offset, 32, 'config digest')
    offset += 32
    n_params = checkpoint_param_count(dims)
    body = take(offset, 8 * n_params, 'parameters')
    if offset + 8 * n_params != len(blob):
        raise FormatError('trailing bytes after parameters', offset=offset + 8 * n_params)
    params = np.frombuffer(body, dtype='<f8').astype(np.float64)
    return {'dims': dims, 'seed': seed, 'flags': flags, 'config_digest': digest, 'params': params}


def checkpoint_param_count(dims):
    """Parameter count of input -> hidden... -> (n_target, n_protected)."""
    *trunk, n_target, n_protected = dims
    count = sum(trunk[i] * trunk[i + 1] + trunk[i + 1] for i in range(len(trunk) - 1))
    feat = trunk[-1]
    return count + feat * n_target + n_target + feat * n_protected + n_protected
