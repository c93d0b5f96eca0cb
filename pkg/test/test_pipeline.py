import csv
import json
import os
import shutil

import pytest

import run
from options.base_options import _flatten, config_digest, read_config_file, resolve_config
from utils.SyntheticDataset import expected_file_size
from utils.utils import file_digest

SMALL = {
    'data.n': 200,
    'data.grid': 4,
    'model.hidden': (8,),
    'train.epochs': 2,
    'train.batch_size': 32,
    'train.lr': 0.01,
    'finetune.epochs': 1,
    'finetune.batch_size': 32,
    'analysis.eps_grid': (0.0, 0.01, 0.05),
    'analysis.num_samples': 2,
    'analysis.ig_steps': 10,
}


def write_config(path, **overrides):
    values = dict(SMALL)
    values.update({k.replace('__', '.'): v for k, v in overrides.items()})
    with open(path, 'w') as f:
        f.write('# test config\n')
        for key, value in values.items():
            f.write('%s: %s\n' % (key, value))
    return str(path)


def cli(*args):
    return run.main([str(a) for a in args])


def resolved_digest(path):
    config, explicit = read_config_file(str(path))
    return config_digest(resolve_config(config, explicit))


def read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope='module')
def base_run(tmp_path_factory):
    """generate + train-base once; tests copy the directory before writing into it."""
    root = tmp_path_factory.mktemp('pipeline')
    config = write_config(root / 'exp.txt')
    out = root / 'out'
    assert cli('generate', '--config', config, '--out', out) == 0
    assert cli('train-base', '--config', config, '--out', out) == 0
    return config, out


@pytest.fixture
def workdir(base_run, tmp_path):
    config, out = base_run
    dst = tmp_path / 'out'
    shutil.copytree(str(out), str(dst))
    return config, dst


class TestGenerate:

    def test_same_config_same_files(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt')
        assert cli('generate', '--config', config, '--out', tmp_path / 'a') == 0
        assert cli('generate', '--config', config, '--out', tmp_path / 'b') == 0
        for name in ('train.bin', 'test.bin', 'train.csv', 'manifest.json'):
            assert file_digest(str(tmp_path / 'a' / 'data' / name)) == file_digest(str(tmp_path / 'b' / 'data' / name))

    def test_default_size_files(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt', data__n=4000, data__grid=8, data__export_csv=False)
        out = tmp_path / 'out'
        assert cli('generate', '--config', config, '--out', out) == 0
        assert os.path.getsize(str(out / 'data' / 'train.bin')) == 23 + 3200 * 514 == expected_file_size(3200, 8)
        assert os.path.getsize(str(out / 'data' / 'test.bin')) == 23 + 800 * 514
        with open(str(out / 'data' / 'manifest.json')) as f:
            manifest = json.load(f)
        assert manifest['n_train'] == 3200 and manifest['files']['train.bin'] == file_digest(str(out / 'data' / 'train.bin'))
        assert 'config_digest' in manifest and manifest['seed'] == 0

    def test_seed_flag_changes_data(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt')
        assert cli('generate', '--config', config, '--out', tmp_path / 'a') == 0
        assert cli('generate', '--config', config, '--out', tmp_path / 'b', '--seed', 1) == 0
        assert file_digest(str(tmp_path / 'a' / 'data' / 'train.bin')) != file_digest(str(tmp_path / 'b' / 'data' / 'train.bin'))


class TestExitCodes:

    def test_missing_config(self, tmp_path):
        assert cli('generate', '--config', tmp_path / 'nope.txt', '--out', tmp_path) == 2

    def test_unknown_key(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt', finetune__alpah=0.5)
        assert cli('generate', '--config', config, '--out', tmp_path / 'out') == 2

    def test_duplicate_key(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt')
        with open(config, 'a') as f:
            f.write('data.n: 10\n')
        assert cli('generate', '--config', config, '--out', tmp_path / 'out') == 2

    def test_bad_value(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt', finetune__alpha=1.5)
        assert cli('generate', '--config', config, '--out', tmp_path / 'out') == 2
        config = write_config(tmp_path / 'exp2.txt', data__n='many')
        assert cli('generate', '--config', config, '--out', tmp_path / 'out') == 2

    def test_missing_dataset(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt')
        assert cli('train-base', '--config', config, '--out', tmp_path / 'out') == 3

    def test_missing_checkpoint(self, tmp_path):
        config = write_config(tmp_path / 'exp.txt')
        out = tmp_path / 'out'
        assert cli('generate', '--config', config, '--out', out) == 0
        assert cli('finetune', '--config', config, '--out', out) == 3
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'order') == 3
        assert cli('analyze', '--config', config, '--out', out, '--checkpoint', out / 'nope.ckpt') == 3
        assert cli('evaluate', '--config', config, '--out', out) == 3

    def test_finetune_before_protected_probe(self, workdir):
        config, out = workdir
        untrained = write_config(out / 'untrained.txt', train__epochs=0)
        assert cli('train-base', '--config', untrained, '--out', out) == 0
        assert cli('finetune', '--config', untrained, '--out', out) == 4

    def test_unknown_axis(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'lr') == 2

    def test_architecture_mismatch(self, workdir):
        config, out = workdir
        other = write_config(out / 'other.txt', model__hidden=(4,))
        assert cli('evaluate', '--config', other, '--out', out, '--checkpoint', out / 'checkpoints' / 'base.ckpt') == 3


class TestTrainBase:

    def test_report_schema(self, base_run):
        config, out = base_run
        with open(str(out / 'reports' / 'base_report.json')) as f:
            report = json.load(f)
        assert set(report['metrics']) == {'acc', 'ddp', 'deo', 'deop', 'protected_acc'}
        assert len(report['counts']) == 8
        assert report['seed'] == 0 and report['config_digest'] == resolved_digest(config)
        assert report['tool'] == 'asac-fairness' and report['stage'] == 'base'

    def test_log_rows(self, base_run):
        _, out = base_run
        rows = read_rows(str(out / 'logs' / 'base_log.csv'))
        assert [r['head'] for r in rows] == ['joint'] * 2 + ['protected'] * 2
        assert all(r['seed'] == '0' for r in rows)
        assert os.path.getsize(str(out / 'logs' / 'train-base.log')) > 0

    def test_opt_txt_is_a_config(self, base_run):
        config, out = base_run
        assert resolved_digest(out / 'opt.txt') == resolved_digest(config)


class TestFinetune:

    def test_zero_epochs_copies_base(self, workdir):
        config, out = workdir
        zero = write_config(out / 'zero.txt', finetune__epochs=0)
        # a different finetune.epochs changes the config digest, so retrain the base under this config
        assert cli('train-base', '--config', zero, '--out', out) == 0
        base_digest = file_digest(str(out / 'checkpoints' / 'base.ckpt'))
        assert cli('finetune', '--config', zero, '--out', out) == 0
        assert file_digest(str(out / 'checkpoints' / 'finetuned.ckpt')) == base_digest
        assert read_rows(str(out / 'logs' / 'finetune_log.csv')) == []

    def test_epochs_logged_and_base_untouched(self, workdir):
        config, out = workdir
        two = write_config(out / 'two.txt', finetune__epochs=2)
        base_digest = file_digest(str(out / 'checkpoints' / 'base.ckpt'))
        assert cli('finetune', '--config', two, '--out', out) == 0
        assert len(read_rows(str(out / 'logs' / 'finetune_log.csv'))) == 2
        assert os.path.isfile(str(out / 'checkpoints' / 'finetune_epoch_2.ckpt'))
        assert file_digest(str(out / 'checkpoints' / 'base.ckpt')) == base_digest
        with open(str(out / 'reports' / 'finetune_report.json')) as f:
            assert json.load(f)['stage'] == 'finetune'

    def test_report_is_deterministic(self, tmp_path):
        reports = []
        for name in ('a', 'b'):
            config = write_config(tmp_path / ('%s.txt' % name))
            out = tmp_path / name
            for command in ('generate', 'train-base', 'finetune'):
                assert cli(command, '--config', config, '--out', out) == 0
            with open(str(out / 'reports' / 'finetune_report.json'), 'rb') as f:
                reports.append(f.read())
        assert reports[0] == reports[1]

    def test_curriculum_dump(self, workdir):
        config, out = workdir
        dump = write_config(out / 'dump.txt', finetune__dump_curriculum=True)
        assert cli('train-base', '--config', dump, '--out', out) == 0
        assert cli('finetune', '--config', dump, '--out', out) == 0
        ranking = read_rows(str(out / 'debug' / 'curriculum_dump.csv'))
        asacs = read_rows(str(out / 'debug' / 'asac_dump.csv'))
        # first minibatch: 32 sources at 3 eps each
        assert len(ranking) == len(asacs) == 32 * 3
        assert [int(r['rank']) for r in ranking] == list(range(96))
        scores = [float(r['score']) for r in ranking]
        assert scores == sorted(scores)
        assert {r['eps'] for r in ranking} == {'0.0', '0.001', '0.01'}
        assert [(r['source_idx'], r['eps']) for r in asacs] == [(r['source_idx'], r['eps']) for r in ranking]
        assert {r['method'] for r in asacs} == {'clean', 'fgsm'}
        assert len([k for k in asacs[0] if k.startswith('f')]) == 16
        assert all(r['config_digest'] == resolved_digest(dump) for r in ranking + asacs)

    def test_no_dump_by_default(self, workdir):
        config, out = workdir
        assert cli('finetune', '--config', config, '--out', out) == 0
        assert not os.path.exists(str(out / 'debug'))


class TestSweep:

    def test_order_sweep(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'order') == 0
        rows = read_rows(str(out / 'sweep' / 'sweep_order.csv'))
        assert [r['value'] for r in rows] == ['ascending', 'descending', 'random']
        assert all(r['acc'] != '' for r in rows)
        assert len({r['config_digest'] for r in rows}) == 3

    def test_runs_differ_only_in_swept_field(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'alpha', '--values', 0.3, 0.7) == 0
        rows = read_rows(str(out / 'sweep' / 'sweep_alpha.csv'))
        assert [r['value'] for r in rows] == ['0.3', '0.7']
        flat = [dict(_flatten(read_config_file(str(out / 'sweep' / ('alpha_%d' % i) / 'opt.txt'))[0]))
                for i in range(2)]
        differing = {k for k in flat[0] if flat[0][k] != flat[1][k]}
        assert differing == {'finetune.alpha', 'out'}
        for i, row in enumerate(rows):
            sub, _ = read_config_file(str(out / 'sweep' / ('alpha_%d' % i) / 'opt.txt'))
            assert row['config_digest'] == config_digest(sub)

    def test_eps_values(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'eps', '--values', '0,0.02') == 0
        rows = read_rows(str(out / 'sweep' / 'sweep_eps.csv'))
        assert [r['value'] for r in rows] == ['0.0|0.02']

    def test_bad_eps_value(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'eps', '--values', '0.01,0.02') == 2

    def test_method_sweep(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'method') == 0
        rows = read_rows(str(out / 'sweep' / 'sweep_method.csv'))
        assert [r['value'] for r in rows] == ['fgsm', 'pgd']
        sub, _ = read_config_file(str(out / 'sweep' / 'method_1' / 'opt.txt'))
        assert sub.finetune.curriculum.attack.method == 'pgd'

    def test_hidden_sweep_retrains_the_base(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'hidden', '--values', '8', '4,4') == 0
        rows = read_rows(str(out / 'sweep' / 'sweep_hidden.csv'))
        assert [r['value'] for r in rows] == ['8', '4|4']
        for i, hidden in enumerate(((8,), (4, 4))):
            sub_out = out / 'sweep' / ('hidden_%d' % i)
            sub, _ = read_config_file(str(sub_out / 'opt.txt'))
            assert tuple(sub.model.hidden) == hidden
            assert os.path.isfile(str(sub_out / 'base.ckpt')) and os.path.isfile(str(sub_out / 'finetuned.ckpt'))

    def test_bad_hidden_value(self, workdir):
        config, out = workdir
        assert cli('sweep', '--config', config, '--out', out, '--axis', 'hidden', '--values', '8,x') == 2


class TestAnalyze:

    def test_sweep_rows(self, workdir):
        config, out = workdir
        ckpt = out / 'checkpoints' / 'base.ckpt'
        assert cli('analyze', '--config', config, '--out', out, '--checkpoint', ckpt, '--mode', 'sweep') == 0
        rows = read_rows(str(out / 'analysis' / 'base_sweep.csv'))
        assert len(rows) == 3 * 2
        assert all(r['checkpoint_digest'] == file_digest(str(ckpt)) for r in rows)

    def test_ig_rows(self, workdir):
        config, out = workdir
        ckpt = out / 'checkpoints' / 'base.ckpt'
        assert cli('analyze', '--config', config, '--out', out, '--checkpoint', ckpt, '--mode', 'ig',
                   '--num_samples', 3) == 0
        assert len(read_rows(str(out / 'analysis' / 'base_ig.csv'))) == 3
        assert os.path.isfile(str(out / 'analysis' / 'base_ig_heatmap.txt'))

    def test_evaluate(self, workdir):
        config, out = workdir
        ckpt = out / 'checkpoints' / 'base.ckpt'
        assert cli('evaluate', '--config', config, '--out', out, '--checkpoint', ckpt) == 0
        with open(str(out / 'reports' / 'evaluate_report.json')) as f:
            evaluated = json.load(f)
        with open(str(out / 'reports' / 'base_report.json')) as f:
            base = json.load(f)
        assert evaluated['metrics'] == base['metrics'] and evaluated['counts'] == base['counts']
