import csv

import numpy as np
import pytest
import torch

from app.analysis import (CURVE_HEADER, integrated_gradients, region_mass, robustness_sweep, target_logit,
                          write_attributions_csv, write_curves_csv, write_heatmap_text)
from models import numerics
from options.configs import get_attack_config
from utils.errors import ConfigError, ShapeError

from conftest import build_model

PROVENANCE = {'config_digest': 'abc', 'seed': 0}


class TestIntegratedGradients:

    def test_completeness(self, model, config, rng):
        for _ in range(50):
            x = numerics.as_tensor(rng.uniform(size=config.model.input_dim))
            attr = integrated_gradients(model, x, steps=200)
            with torch.no_grad():
                delta = float(target_logit(model, x, attr.target_class)
                              - target_logit(model, torch.zeros_like(x), attr.target_class))
            assert abs(float(attr.values.sum()) - delta) <= 1e-2
            assert abs(attr.residual - (float(attr.values.sum()) - delta)) < 1e-12

    def test_residual_shrinks_with_steps(self, trained_model, rng):
        model, _, cfg = trained_model
        xs = [numerics.as_tensor(rng.uniform(size=cfg.model.input_dim)) for _ in range(20)]
        mean_residual = [np.mean([abs(integrated_gradients(model, x, steps=m).residual) for x in xs])
                         for m in (10, 50, 200)]
        for coarse, fine in zip(mean_residual, mean_residual[1:]):
            assert fine <= 1.1 * coarse + 1e-12

    def test_linear_model_recovers_weight_times_input(self, config, rng):
        config.model.hidden = ()
        model = build_model(config.model)
        weight = model.netTarget.affine.weight.detach()
        for c in (0, 1):
            x = numerics.as_tensor(rng.uniform(size=config.model.input_dim))
            attr = integrated_gradients(model, x, c=c, steps=7)
            np.testing.assert_allclose(attr.values.numpy(), (weight[:, c] * x).numpy(), rtol=0, atol=1e-10)
            assert abs(attr.residual) < 1e-10

    def test_baseline_equal_to_input_gives_zero(self, model, config, rng):
        x = numerics.as_tensor(rng.uniform(size=config.model.input_dim))
        attr = integrated_gradients(model, x, baseline=x.clone(), steps=10)
        assert not attr.values.any()

    def test_default_class_is_prediction(self, model, config, rng):
        x = numerics.as_tensor(rng.uniform(size=config.model.input_dim))
        attr = integrated_gradients(model, x, steps=5)
        assert attr.target_class == int(torch.argmax(model.forward_target(x)))
        assert attr.steps == 5 and not attr.baseline.any()

    def test_bad_arguments(self, model, config):
        x = torch.zeros(config.model.input_dim, dtype=torch.float64)
        with pytest.raises(ConfigError):
            integrated_gradients(model, x, steps=0)
        with pytest.raises(ShapeError):
            integrated_gradients(model, x, baseline=torch.zeros(3, dtype=torch.float64))
        with pytest.raises(ShapeError):
            integrated_gradients(model, x.reshape(1, -1))

    def test_region_mass(self, model, config, rng):
        x = numerics.as_tensor(rng.uniform(size=config.model.input_dim))
        attr = integrated_gradients(model, x, steps=10)
        mask = np.zeros(config.model.input_dim, dtype=bool)
        mask[::2] = True
        assert abs(region_mass(attr, mask) + region_mass(attr, ~mask) - 1.0) < 1e-12


class TestRobustnessSweep:

    def test_points(self, trained_model):
        model, data, _ = trained_model
        x, y, a = data.tensors([0])
        curve = robustness_sweep(model, x[0], y[0], a[0], (0.05, 0.0, 0.01), get_attack_config())
        assert [pt.eps for pt in curve.points] == [0.0, 0.01, 0.05]
        first = curve.points[0]
        assert not first.flipped_target and not first.flipped_protected
        with torch.no_grad():
            p = numerics.softmax(model.forward_target(x[0]))
        assert abs(first.p_target - float(p[int(y[0])])) < 1e-12
        for pt in curve.points:
            assert 0.0 <= pt.p_target <= 1.0 and 0.0 <= pt.p_protected <= 1.0

    def test_pgd_sweep(self, trained_model):
        model, data, _ = trained_model
        x, y, a = data.tensors([1])
        cfg = get_attack_config()
        cfg.method = 'pgd'
        assert len(robustness_sweep(model, x[0], y[0], a[0], (0.0, 0.02), cfg)) == 2

    def test_empty_grid(self, model, config):
        x = torch.zeros(config.model.input_dim, dtype=torch.float64)
        with pytest.raises(ConfigError):
            robustness_sweep(model, x, 0, 0, (), get_attack_config())


class TestWriters:

    def test_curves_csv(self, trained_model, tmp_path):
        model, data, _ = trained_model
        x, y, a = data.tensors([0, 1, 2])
        grid = (0.0, 0.01, 0.05, 0.1)
        curves = [robustness_sweep(model, x[i], y[i], a[i], grid, get_attack_config()) for i in range(3)]
        path = str(tmp_path / 'sweep.csv')
        write_curves_csv(path, curves, [0, 1, 2], PROVENANCE)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == CURVE_HEADER + list(PROVENANCE)
        assert len(rows) - 1 == len(grid) * 3
        assert all(row[-2:] == ['abc', '0'] for row in rows[1:])

    def test_attribution_dumps(self, model, config, rng, tmp_path):
        xs = [numerics.as_tensor(rng.uniform(size=config.model.input_dim)) for _ in range(2)]
        attrs = [integrated_gradients(model, x, steps=5) for x in xs]
        path = str(tmp_path / 'ig.csv')
        write_attributions_csv(path, attrs, [4, 9], PROVENANCE)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert len(rows) == 3 and rows[1][0] == '4'
        assert len(rows[1]) == 4 + config.model.input_dim + len(PROVENANCE)
        assert float(rows[2][4]) == float(attrs[1].values[0])

        heatmap = str(tmp_path / 'ig.txt')
        write_heatmap_text(heatmap, attrs, [4, 9], config.data.grid, PROVENANCE)
        with open(heatmap) as f:
            lines = f.read().splitlines()
        assert lines[0] == '# config_digest=abc seed=0'
        assert lines[1].startswith('sample 4 class')
        assert len(lines[2].split()) == config.data.grid
