#!/usr/bin/env python
"""The run script.

Subcommands, each reading and writing artifacts under the output directory:

    generate     synthetic biased dataset -> data/
    train-base   backbone with both heads, then φ refit on the frozen backbone -> checkpoints/base.ckpt
    finetune     curriculum fine-tuning on ASACs -> checkpoints/finetuned.ckpt
    sweep        one fine-tune per value of order | eps | alpha | method | hidden
    analyze      robustness curves or Integrated Gradients for a checkpoint
    evaluate     fairness report for any checkpoint
"""
import argparse
import copy
import json
import logging
import os
import sys
from collections import OrderedDict

import torch
from tqdm import tqdm

from app import analysis
from models import create_model
from options.base_options import BaseOptions, config_digest, format_options, validate_experiment_config
from options.test_options import TestOptions
from options.train_options import SWEEP_AXES, TrainOptions
from training.finetune import finetune
from training.train_base import train_base
from utils import SyntheticDataset
from utils.errors import ConfigError, FormatError, MissingArtifactError, NumericError
from utils.fairness import csv_header, csv_row, evaluate, protected_accuracy
from utils.utils import dump_json, file_digest, mkdirs, require_file, stream_seed, write_csv
from utils.visualizer import Visualizer

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4

MANIFEST = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'manifest.json')

DEFAULT_SWEEPS = {
    'order': ['ascending', 'descending', 'random'],
    'alpha': [0.3, 0.5, 0.7],
    'eps': [(0.0, 0.001, 0.01), (0.0, 0.001, 0.03), (0.0, 0.001, 0.05)],
    'method': ['fgsm', 'pgd'],
    'hidden': [(64, 32), (32,), (128, 64)],
}
SWEEP_KEYS = {'order': 'finetune.curriculum.order', 'eps': 'finetune.curriculum.eps', 'alpha': 'finetune.alpha',
              'method': 'finetune.curriculum.attack.method', 'hidden': 'model.hidden'}


# ------------------------------------- Helpers ---------------------------------------

def tool_info():
    with open(MANIFEST) as f:
        manifest = json.load(f)
    return manifest['name'], manifest['version']


def provenance(config, digest):
    name, version = tool_info()
    return OrderedDict([('config_digest', digest), ('seed', config.seed), ('tool', name), ('version', version)])


def paths(out):
    return {
        'data': os.path.join(out, 'data'),
        'train': os.path.join(out, 'data', 'train.bin'),
        'test': os.path.join(out, 'data', 'test.bin'),
        'checkpoints': os.path.join(out, 'checkpoints'),
        'base': os.path.join(out, 'checkpoints', 'base.ckpt'),
        'finetuned': os.path.join(out, 'checkpoints', 'finetuned.ckpt'),
        'reports': os.path.join(out, 'reports'),
        'logs': os.path.join(out, 'logs'),
        'sweep': os.path.join(out, 'sweep'),
        'analysis': os.path.join(out, 'analysis'),
        'debug': os.path.join(out, 'debug'),
    }


def load_splits(config):
    p = paths(config.out)
    train = SyntheticDataset.load(require_file(p['train'], 'training set'))
    test = SyntheticDataset.load(require_file(p['test'], 'test set'))
    return train, test


def new_model(config):
    generator = torch.Generator().manual_seed(stream_seed(config.seed, 'init'))
    return create_model(config.model, seed=config.seed, generator=generator)


def load_model(config, path):
    require_file(path, 'checkpoint')
    model = new_model(config)
    model.load_networks(path)
    log.info('loaded checkpoint %s (heads trained: %s)', path, ', '.join(sorted(model.trained_heads)) or 'none')
    return model


def report_payload(model, test, stage, prov, **extra):
    report = evaluate(model, test)
    payload = report.to_dict()
    payload['metrics']['protected_acc'] = protected_accuracy(model, test)
    payload['stage'] = stage
    payload.update(extra)
    payload.update(prov)
    return report, payload


def set_sweep_value(config, axis, value):
    section, _, leaf = SWEEP_KEYS[axis].rpartition('.')
    node = config
    for part in section.split('.'):
        node = node[part]
    node[leaf] = value


def sweep_values(axis, raw):
    if axis not in SWEEP_AXES:
        raise ConfigError('unknown sweep axis %r, expected one of %s' % (axis, ', '.join(SWEEP_AXES)))
    if raw is None:
        return list(DEFAULT_SWEEPS[axis])
    try:
        if axis in ('order', 'method'):
            return list(raw)
        if axis == 'alpha':
            return [float(v) for v in raw]
        if axis == 'hidden':
            return [tuple(int(t) for t in v.split(',') if t) for v in raw]
        return [tuple(float(t) for t in v.split(',')) for v in raw]
    except ValueError as e:
        raise ConfigError('bad %s sweep value: %s' % (axis, e))


def dump_curriculum(out_dir, stream, train, prov):
    """Write one ordered minibatch: its ranking and the ASACs themselves."""
    mkdirs(out_dir)
    extra = list(prov.values())
    write_csv(os.path.join(out_dir, 'curriculum_dump.csv'), ['source_idx', 'eps', 'score', 'rank'] + list(prov),
              [list(row) + extra for row in stream.to_rows()])

    entries = stream.entries
    dataset_ids = [e.dataset_index for e in entries]
    asacs = SyntheticDataset.SyntheticDataSet(torch.stack([e.asac.x_adv for e in entries]).detach().numpy(),
                                              [e.y for e in entries], train.a[dataset_ids], train.grid)
    columns = OrderedDict([('source_idx', [e.asac.source_index for e in entries]),
                           ('eps', [e.asac.eps for e in entries]),
                           ('method', [e.asac.method for e in entries])])
    columns.update((k, [v] * len(entries)) for k, v in prov.items())
    SyntheticDataset.export_csv(asacs, os.path.join(out_dir, 'asac_dump.csv'), extra_columns=columns)
    log.info('dumped the first curriculum minibatch (%d ASACs) to %s', len(entries), out_dir)


def format_sweep_value(value):
    if isinstance(value, tuple):
        return '|'.join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# ------------------------------------- Commands ---------------------------------------

def cmd_generate(opt, config, prov):
    p = paths(config.out)
    mkdirs(p['data'])
    log.info('Step 1: Generating %d samples on a %dx%d grid', config.data.n, config.data.grid, config.data.grid)
    dataset = SyntheticDataset.generate(config.data)
    f = config.data.train_fraction
    train, test = SyntheticDataset.split(dataset, (f, 1.0 - f), stream_seed(config.seed, 'split'))
    log.info('Step 2: Writing %d train / %d test samples, corr(y, a) = %.4f',
             len(train), len(test), dataset.correlation())

    files = OrderedDict()
    for name, part in (('train', train), ('test', test)):
        SyntheticDataset.save(part, p[name])
        files[name + '.bin'] = file_digest(p[name])
        if config.data.export_csv:
            csv_path = os.path.join(p['data'], name + '.csv')
            extra = OrderedDict((k, [v] * len(part)) for k, v in prov.items())
            SyntheticDataset.export_csv(part, csv_path, extra_columns=extra)
            files[name + '.csv'] = file_digest(csv_path)

    manifest = {'files': files, 'n_train': len(train), 'n_test': len(test), 'grid': config.data.grid,
                'correlation': dataset.correlation()}
    manifest.update(prov)
    dump_json(os.path.join(p['data'], 'manifest.json'), manifest)


def cmd_train_base(opt, config, prov):
    p = paths(config.out)
    train, test = load_splits(config)
    mkdirs([p['checkpoints'], p['reports'], p['logs']])
    model = new_model(config)
    model.print_networks(opt.verbose)
    visualizer = Visualizer(os.path.join(p['logs'], 'base_log.csv'), ['head', 'epoch', 'mean_loss', 'acc'], prov)

    log.info('Step 1: Training the backbone and heads, protected weight %r', config.train.protected_weight)
    model, stages = train_base(model, train, config.train, progress=opt.progress)
    for head, history in stages:
        for row in history:
            visualizer.print_current_losses(row['epoch'], dict(row, head=head))

    model.save_networks(p['base'], config_digest=bytes.fromhex(opt.digest))
    report, payload = report_payload(model, test, 'base', prov)
    dump_json(os.path.join(p['reports'], 'base_report.json'), payload)
    log.info('base model: acc %.4f, protected acc %.4f', report.acc, payload['metrics']['protected_acc'])


def cmd_finetune(opt, config, prov):
    p = paths(config.out)
    train, test = load_splits(config)
    model = load_model(config, p['base'])
    mkdirs([p['checkpoints'], p['reports'], p['logs']])
    visualizer = Visualizer(os.path.join(p['logs'], 'finetune_log.csv'),
                            ['epoch', 'mean_loss', 'acc', 'ddp', 'deo', 'deop'], prov)
    digest = bytes.fromhex(opt.digest)

    def on_epoch_end(epoch, current, row):
        visualizer.print_current_losses(epoch, row)
        current.save_networks(os.path.join(p['checkpoints'], 'finetune_epoch_%d.ckpt' % epoch), config_digest=digest)

    def on_curriculum(epoch, step, stream):
        if epoch == 1 and step == 0:
            dump_curriculum(p['debug'], stream, train, prov)

    log.info('Step 1: Fine-tuning for %d epochs, order %s, alpha %r', config.finetune.epochs,
             config.finetune.curriculum.order, config.finetune.alpha)
    model, _ = finetune(model, train, config.finetune, eval_set=test, on_epoch_end=on_epoch_end,
                        on_curriculum=on_curriculum if config.finetune.dump_curriculum else None,
                        progress=opt.progress)
    model.save_networks(p['finetuned'], config_digest=digest)
    _, payload = report_payload(model, test, 'finetune', prov)
    dump_json(os.path.join(p['reports'], 'finetune_report.json'), payload)


def cmd_sweep(opt, config, prov):
    p = paths(config.out)
    values = sweep_values(opt.axis, opt.values)
    train, test = load_splits(config)
    # a new architecture cannot reuse the base checkpoint
    base = None if opt.axis == 'hidden' else load_model(config, p['base'])
    mkdirs(p['sweep'])
    name, version = tool_info()

    rows = []
    for i, value in enumerate(tqdm(values, desc='sweep %s' % opt.axis, disable=not opt.progress)):
        sub = copy.deepcopy(config)
        set_sweep_value(sub, opt.axis, value)
        sub.out = os.path.join(p['sweep'], '%s_%d' % (opt.axis, i))
        validate_experiment_config(sub)
        digest = config_digest(sub)
        mkdirs(sub.out)
        with open(os.path.join(sub.out, 'opt.txt'), 'wt') as f:
            f.write(format_options(sub) + '\n')

        log.info('sweep %s = %s', opt.axis, format_sweep_value(value))
        start = base
        if start is None:
            start, _ = train_base(new_model(sub), train, sub.train)
            start.save_networks(os.path.join(sub.out, 'base.ckpt'), config_digest=bytes.fromhex(digest))
        model, _ = finetune(start, train, sub.finetune, eval_set=test)
        model.save_networks(os.path.join(sub.out, 'finetuned.ckpt'), config_digest=bytes.fromhex(digest))
        report = evaluate(model, test)
        rows.append([opt.axis, format_sweep_value(value)] + csv_row(report) + [digest, sub.seed, name, version])

    header = ['axis', 'value'] + csv_header() + list(prov)
    write_csv(os.path.join(p['sweep'], 'sweep_%s.csv' % opt.axis), header, rows)


def cmd_analyze(opt, config, prov):
    p = paths(config.out)
    ckpt = opt.checkpoint or p['finetuned']
    _, test = load_splits(config)
    model = load_model(config, ckpt)
    mkdirs(p['analysis'])
    n = min(opt.num_samples or config.analysis.num_samples, len(test))
    if n < 1:
        raise ConfigError('analyze needs at least one test sample')
    sample_ids = list(range(n))
    x, y, a = test.tensors(sample_ids)
    stem = os.path.splitext(os.path.basename(ckpt))[0]
    prov = OrderedDict(prov)
    prov['checkpoint_digest'] = file_digest(ckpt)

    if opt.mode == 'sweep':
        curves = [analysis.robustness_sweep(model, x[i], y[i], a[i], config.analysis.eps_grid, config.analysis.attack)
                  for i in sample_ids]
        analysis.write_curves_csv(os.path.join(p['analysis'], '%s_sweep.csv' % stem), curves, sample_ids, prov)
    else:
        attributions = [analysis.integrated_gradients(model, x[i], steps=config.analysis.ig_steps) for i in sample_ids]
        worst = max(abs(attr.residual) for attr in attributions)
        log.info('IG completeness residual: max %.3e over %d samples', worst, n)
        analysis.write_attributions_csv(os.path.join(p['analysis'], '%s_ig.csv' % stem), attributions, sample_ids, prov)
        analysis.write_heatmap_text(os.path.join(p['analysis'], '%s_ig_heatmap.txt' % stem), attributions,
                                    sample_ids, test.grid, prov)


def cmd_evaluate(opt, config, prov):
    p = paths(config.out)
    ckpt = opt.checkpoint or p['finetuned']
    _, test = load_splits(config)
    model = load_model(config, ckpt)
    mkdirs(p['reports'])
    _, payload = report_payload(model, test, 'evaluate', prov, checkpoint_digest=file_digest(ckpt))
    dump_json(os.path.join(p['reports'], 'evaluate_report.json'), payload)
    log.info('evaluate: %s', json.dumps(payload['metrics'], sort_keys=True))


COMMANDS = OrderedDict([
    ('generate', (BaseOptions, cmd_generate)),
    ('train-base', (TrainOptions, cmd_train_base)),
    ('finetune', (TrainOptions, cmd_finetune)),
    ('sweep', (TrainOptions, cmd_sweep)),
    ('analyze', (TestOptions, cmd_analyze)),
    ('evaluate', (TestOptions, cmd_evaluate)),
])


def build_parser():
    parser = argparse.ArgumentParser(prog='run.py', description=__doc__.splitlines()[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    options = {}
    for name, (options_cls, _) in COMMANDS.items():
        options[name] = options_cls()
        options[name].initialize(subparsers.add_parser(name))
    return parser, options


def main(argv=None) -> int:
    parser, options = build_parser()
    args = parser.parse_args(argv)
    _, command = COMMANDS[args.command]

    # Set up log capture: stderr now, the per-command file once the output directory is known
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    handlers = [logging.StreamHandler(sys.stderr)]
    handlers[0].setFormatter(formatter)
    logger.addHandler(handlers[0])

    try:
        opt = options[args.command].parse(args)
        config = opt.config_dict
        mkdirs(os.path.join(config.out, 'logs'))
        file_handler = logging.FileHandler(os.path.join(config.out, 'logs', '%s.log' % args.command), mode='w')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
        handlers.append(file_handler)

        torch.set_num_threads(config.threads)
        options[args.command].print_options(opt)
        log.info('%s: seed %d, config digest %s', args.command, config.seed, opt.digest)
        command(opt, config, provenance(config, opt.digest))
        return EXIT_OK
    except ConfigError as e:
        log.error('config error: %s', e)
        return EXIT_CONFIG
    except (MissingArtifactError, FormatError) as e:
        log.error('artifact error: %s', e)
        return EXIT_MISSING
    except (NumericError, RuntimeError, ValueError, LookupError) as e:
        log.error('run failed: %s', e)
        return EXIT_RUNTIME
    finally:
        for handler in handlers:
            logger.removeHandler(handler)
            handler.close()


# Only execute if file is run as main, not when imported by another module
if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
