"""Synthetic biased dataset: g x g grids with a target bar and a protected column.

y ~ Bernoulli(0.5), a = y with probability `bias` else 1 - y, so the Pearson
correlation of (y, a) is 2 * bias - 1. The target signal is the horizontal bar
at row g // 4, the protected signal the left column; they share one pixel.
"""
import csv
import os
import struct

import numpy as np
import torch
import torch.utils.data

from utils.errors import ConfigError, FormatError, MissingArtifactError

DATASET_MAGIC = b'ASACDS1'
HEADER = struct.Struct('<QII')     # n, d, g


# ------------------------------------- Functions ---------------------------------------

def validate_gen_config(cfg):
    if not 0.5 <= cfg.bias <= 1.0:
        raise ConfigError('data.bias must lie in [0.5, 1], got %r' % cfg.bias)
    if cfg.noise < 0:
        raise ConfigError('data.noise must be >= 0, got %r' % cfg.noise)
    if cfg.grid < 4:
        raise ConfigError('data.grid must be >= 4, got %r' % cfg.grid)
    if cfg.n < 0:
        raise ConfigError('data.n must be >= 0, got %r' % cfg.n)
    if not 0.0 <= cfg.train_fraction <= 1.0:
        raise ConfigError('data.train_fraction must lie in [0, 1], got %r' % cfg.train_fraction)


def target_mask(g):
    mask = np.zeros((g, g), dtype=bool)
    mask[g // 4, :] = True
    return mask.reshape(-1)


def protected_mask(g):
    mask = np.zeros((g, g), dtype=bool)
    mask[:, 0] = True
    return mask.reshape(-1)


def generate(cfg):
    validate_gen_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, g = cfg.n, cfg.grid
    # draw order is fixed: labels, group agreement, background
    y = (rng.random(n) < 0.5).astype(np.uint8)
    agree = rng.random(n) < cfg.bias
    a = np.where(agree, y, 1 - y).astype(np.uint8)
    x = np.clip(rng.normal(0.5, cfg.noise, size=(n, g, g)), 0.0, 1.0)

    x[y == 1, g // 4, :] += cfg.signal
    x[a == 1, :, 0] += cfg.signal
    x = np.clip(x, 0.0, 1.0).reshape(n, g * g)
    return SyntheticDataSet(x, y, a, g)


def _record_dtype(d):
    return np.dtype([('x', '<f8', (d,)), ('y', 'u1'), ('a', 'u1')])


def save(dataset, path):
    d = dataset.dim
    records = np.zeros(len(dataset), dtype=_record_dtype(d))
    records['x'] = dataset.features
    records['y'] = dataset.y
    records['a'] = dataset.a
    with open(path, 'wb') as f:
        f.write(DATASET_MAGIC)
        f.write(HEADER.pack(len(dataset), d, dataset.grid))
        f.write(records.tobytes())


def load(path):
    if not os.path.isfile(path):
        raise MissingArtifactError('dataset not found: %s' % path)
    with open(path, 'rb') as f:
        blob = f.read()

    if len(blob) < len(DATASET_MAGIC) or blob[:len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError('bad dataset magic %r, expected %r' % (blob[:len(DATASET_MAGIC)], DATASET_MAGIC), offset=0)
    offset = len(DATASET_MAGIC)
    if len(blob) < offset + HEADER.size:
        raise FormatError('dataset header truncated', offset=len(blob))
    n, d, g = HEADER.unpack_from(blob, offset)
    if d != g * g:
        raise FormatError('feature count %d is not grid %d squared' % (d, g), offset=offset)
    offset += HEADER.size

    dtype = _record_dtype(d)
    expected = offset + n * dtype.itemsize
    if len(blob) < expected:
        complete = (len(blob) - offset) // dtype.itemsize
        raise FormatError('dataset truncated after %d of %d records' % (complete, n), offset=len(blob))
    if len(blob) > expected:
        raise FormatError('trailing bytes after %d records' % n, offset=expected)
    records = np.frombuffer(blob, dtype=dtype, count=n, offset=offset)

    x = records['x'].astype(np.float64)
    y = records['y'].copy()
    a = records['a'].copy()
    bad = np.flatnonzero((y > 1) | (a > 1) | ~np.all((x >= 0.0) & (x <= 1.0), axis=1))
    if bad.size:
        raise FormatError('record %d violates label/range invariants' % bad[0],
                          offset=offset + int(bad[0]) * dtype.itemsize)
    return SyntheticDataSet(x, y, a, g)


def expected_file_size(n, g):
    return len(DATASET_MAGIC) + HEADER.size + n * _record_dtype(g * g).itemsize


def split(dataset, fractions, seed):
    """Seeded shuffle, then consecutive parts of size floor(f * n); the last part takes the rest."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError('split fractions must be non-negative and sum to 1, got %s' % fractions)
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    parts = []
    start = 0
    for i, f in enumerate(fractions):
        stop = n if i == len(fractions) - 1 else start + int(np.floor(f * n))
        parts.append(dataset.subset(perm[start:stop]))
        start = stop
    return tuple(parts)


def export_csv(dataset, path, extra_columns=None):
    """CSV with header f0..f(d-1),y,a followed by any `extra_columns` (name -> per-row values)."""
    extra_columns = extra_columns or {}
    header = ['f%d' % i for i in range(dataset.dim)] + ['y', 'a'] + list(extra_columns)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [int(dataset.y[i]), int(dataset.a[i])]
            row += [_csv_cell(col[i]) for col in extra_columns.values()]
            writer.writerow(row)


def _csv_cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


class SyntheticDataSet(torch.utils.data.Dataset):

    def __init__(self, features, y, a, grid):
        self.features = np.asarray(features, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.uint8)
        self.a = np.asarray(a, dtype=np.uint8)
        self.grid = int(grid)
        if self.features.ndim != 2 or self.features.shape[1] != self.grid * self.grid:
            raise ConfigError('features must be (n, %d), got %s' % (self.grid * self.grid, self.features.shape))
        if not len(self.features) == len(self.y) == len(self.a):
            raise ConfigError('features, y and a differ in length')

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return SyntheticDataSet(self.features[indices], self.y[indices], self.a[indices], self.grid)

    def tensors(self, indices=None):
        """(x, y, a) as torch tensors: float64 features, int64 labels."""
        if indices is None:
            indices = slice(None)
        x = torch.from_numpy(self.features[indices].copy())
        y = torch.from_numpy(self.y[indices].astype(np.int64))
        a = torch.from_numpy(self.a[indices].astype(np.int64))
        return x, y, a

    def correlation(self):
        """Empirical Pearson correlation of (y, a)."""
        return float(np.corrcoef(self.y.astype(np.float64), self.a.astype(np.float64))[0, 1])

    def equals(self, other):
        return (self.grid == other.grid and np.array_equal(self.features, other.features)
                and np.array_equal(self.y, other.y) and np.array_equal(self.a, other.a))

    def __getitem__(self, index):
        return (torch.from_numpy(self.features[index].copy()),
                int(self.y[index]), int(self.a[index]))

    def __len__(self):
        return len(self.features)
