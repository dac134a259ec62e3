import json
import os
import tempfile
import unittest
from unittest import mock

from selection_tools.config import ExperimentConfig, load_config, resolve_workers
from selection_tools.errors import ConfigException


def minimal(**changes):
    values = {
        'seed': 3,
        'dataset': {'name': 'glyphs', 'num_classes': 3, 'train_per_class': 10, 'test_per_class': 5},
        'shifts': {'corruptions': ['contrast'], 'severities': [2]},
        'n_s': 12,
        'arch': 'mlp_small',
        'methods': ['metasel', 'gini'],
        'budgets': [0.05, 0.1],
        'output_dir': 'out',
    }
    values.update(changes)
    return values


class TestExperimentConfig(unittest.TestCase):

    def test_defaults(self):
        config = ExperimentConfig.from_dict(minimal())
        self.assertEqual(config.methods, ('metasel', 'gini'))
        self.assertEqual(config.odin.temperature, 1000.0)
        self.assertEqual(config.meta.epochs, 200)
        self.assertEqual(config.shifts.cells(), [('contrast', 2)])
        self.assertEqual(config.subject_name('contrast', 2), 'glyphs_contrast_2')

    def test_missing_field_is_named(self):
        values = minimal()
        del values['n_s']
        with self.assertRaises(ConfigException) as ctx:
            ExperimentConfig.from_dict(values)
        self.assertIn('n_s', str(ctx.exception))

    def test_unknown_fields(self):
        with self.assertRaises(ConfigException):
            ExperimentConfig.from_dict(minimal(colour='red'))
        with self.assertRaises(ConfigException) as ctx:
            ExperimentConfig.from_dict(minimal(nns={'k': 3, 'beta': 1.0}))
        self.assertIn('beta', str(ctx.exception))

    def test_invalid_values(self):
        for changes in ({'methods': ['metasel', 'random']}, {'methods': []}, {'methods': ['gini', 'gini']},
                        {'budgets': [0.0]}, {'budgets': [1.5]}, {'arch': 'resnet'}, {'n_s': 0},
                        {'shifts': {'corruptions': ['contrast'], 'severities': [6]}},
                        {'shifts': {'corruptions': ['fog'], 'severities': [2]}},
                        {'odin': {'temperature': -1}}, {'base_metric': 'entropy'}):
            with self.assertRaises(ConfigException, msg=str(changes)):
                ExperimentConfig.from_dict(minimal(**changes))

    def test_overrides(self):
        config = ExperimentConfig.from_dict(minimal()).with_overrides(output_dir='elsewhere', seed=9,
                                                                       methods=['gini'], budgets=[0.2])
        self.assertEqual(config.output_dir, 'elsewhere')
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.methods, ('gini',))
        self.assertEqual(config.budgets, (0.2,))
        with self.assertRaises(ConfigException):
            ExperimentConfig.from_dict(minimal()).with_overrides(methods=['nope'])

    def test_identifiers(self):
        config = ExperimentConfig.from_dict(minimal())
        self.assertEqual(config.run_id, ExperimentConfig.from_dict(minimal()).run_id)
        self.assertTrue(config.run_id.startswith('seed3-'))
        self.assertEqual(config.run_id, config.with_overrides(output_dir='other').run_id)
        changed = config.with_overrides(methods=['gini'])
        self.assertNotEqual(config.run_id, changed.run_id)
        self.assertEqual(config.data_id, changed.data_id)
        self.assertNotEqual(config.data_id, config.with_overrides(seed=4).data_id)


class TestLoadConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_load(self):
        path = os.path.join(self.tmp.name, 'config.json')
        with open(path, 'w') as fh:
            json.dump(minimal(), fh)
        self.assertEqual(load_config(path).n_s, 12)

    def test_missing_and_invalid_files(self):
        with self.assertRaises(ConfigException):
            load_config(os.path.join(self.tmp.name, 'absent.json'))
        path = os.path.join(self.tmp.name, 'broken.json')
        with open(path, 'w') as fh:
            fh.write('{"seed": ')
        with self.assertRaises(ConfigException):
            load_config(path)


class TestWorkers(unittest.TestCase):

    def test_flag_wins(self):
        with mock.patch.dict(os.environ, {'MSEL_WORKERS': '4'}):
            self.assertEqual(resolve_workers(2), 2)
            self.assertEqual(resolve_workers(), 4)

    def test_default(self):
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_workers(), 1)

    def test_invalid(self):
        with mock.patch.dict(os.environ, {'MSEL_WORKERS': 'many'}):
            with self.assertRaises(ConfigException):
                resolve_workers()
        with self.assertRaises(ConfigException):
            resolve_workers(0)


if __name__ == '__main__':
    unittest.main()
