import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from selection_tools.config import METHODS, ExperimentConfig, load_config
from selection_tools.datagen import Dataset, Role
from selection_tools.errors import OutputException
from selection_tools.evaluation import MisclassificationOracle
from selection_tools.metasel import MetaModel
from selection_tools.models import Classifier, Layer, LayerKind
from selection_tools.scripts import (FAILED_MARKER, Subject, cmd_ablate, cmd_gen_data, cmd_report, cmd_run,
                                     load_data, rank_task, summarizable)

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, 'configs', 'default.json')
ALWAYS_APPLICABLE = ('gini', 'vanilla', 'margin', 'nns', 'datis')


def tiny_config(output_dir, **changes):
    values = {
        'seed': 0,
        'dataset': {'name': 'glyphs', 'num_classes': 4, 'train_per_class': 60, 'test_per_class': 25},
        'shifts': {'corruptions': ['brightness', 'saturate', 'gaussian_noise'], 'severities': [4]},
        'n_s': 24,
        'arch': 'mlp_small',
        'methods': list(METHODS),
        'budgets': [0.1, 0.5, 1.0],
        'output_dir': output_dir,
        'source_train': {'epochs': 20, 'batch_size': 16, 'seed': 0},
        'finetune': {'epochs': 10, 'batch_size': 8, 'seed': 1},
        'meta': {'epochs': 20, 'patience': 3, 'batch_size': 16},
        'nns': {'k': 5},
        'datis': {'k': 5},
        'ensemble': {'n_ensembles': 2},
    }
    values.update(changes)
    return ExperimentConfig.from_dict(values)


def read_bytes(path):
    with open(path, 'rb') as fh:
        return fh.read()


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


class TestGenData(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = tiny_config(self.tmp.name, dataset={'num_classes': 2, 'train_per_class': 5, 'test_per_class': 3},
                                  shifts={})

    def test_full_grid(self):
        directory = cmd_gen_data(self.config)
        targets = [n for n in os.listdir(directory) if n.endswith('.msds') and not n.startswith('source_')]
        self.assertEqual(len(targets), 2 * 21)
        manifest = read_json(os.path.join(directory, 'manifest.json'))
        self.assertEqual(manifest['files']['source_train.msds'], {'count': 10, 'role': 'source_train'})
        self.assertEqual(manifest['files']['contrast_2_test.msds']['count'], 6)

    def test_rerun_is_identical(self):
        directory = cmd_gen_data(self.config)
        first = {n: read_bytes(os.path.join(directory, n)) for n in os.listdir(directory)}
        cmd_gen_data(self.config)
        second = {n: read_bytes(os.path.join(directory, n)) for n in os.listdir(directory)}
        self.assertEqual(first, second)

    def test_load_data_generates_when_missing(self):
        source_train, source_test, targets = load_data(self.config)
        self.assertEqual(len(source_train), 10)
        self.assertEqual(len(targets), 21)
        target_train, target_test = targets[('contrast', 3)]
        self.assertEqual(list(target_train.labels), list(source_train.labels))
        self.assertEqual(len(target_test), len(source_test))


class TestRankTask(unittest.TestCase):
    '''A model that always predicts class 0, fine-tuned on class-0 inputs only.'''

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = tiny_config(self.tmp.name)
        model = Classifier.build([Layer(LayerKind.DENSE, (4, 2))], seed=0)
        model.params[0].data[...] = 0.0
        model.params[1].data[...] = [5.0, 0.0]
        rng = np.random.default_rng(0)
        sample = Dataset(rng.uniform(size=(6, 4)), np.zeros(6), Role.TARGET_TRAIN, 2)
        test = Dataset(rng.uniform(size=(8, 4)), [0, 1] * 4, Role.TARGET_TEST, 2)
        oracle = MisclassificationOracle.from_predictions(test.ids, np.zeros(8), test.labels)
        self.subject = Subject('glyphs_brightness_4', 'brightness', 4, model, sample, test, None, oracle, None)

    def _ranking_path(self, method):
        return os.path.join(self.tmp.name, 'rankings', self.subject.name, method + '.csv')

    def test_ranking_written_on_completion(self):
        rows, timing = rank_task(self.config, self.tmp.name, 'gini', self.subject, None, None)
        self.assertEqual(len(rows), 3)
        self.assertEqual(timing['method'], 'gini')
        frame = pd.read_csv(self._ranking_path('gini'))
        self.assertEqual(sorted(frame['input_id']), list(range(8)))

    def test_failure_is_recorded_not_raised(self):
        rows, failure = rank_task(self.config, self.tmp.name, 'dsa', self.subject, None, None)
        self.assertIsNone(rows)
        self.assertEqual((failure['subject'], failure['method']), (self.subject.name, 'dsa'))
        self.assertTrue(failure['error'].startswith('DataException'))
        self.assertFalse(os.path.exists(self._ranking_path('dsa')))


class TestSummarizable(unittest.TestCase):

    def test_keeps_complete_methods(self):
        curves = pd.DataFrame({
            'subject': ['a', 'a', 'a', 'b', 'b', 'c'],
            'method': ['metasel', 'gini', 'lsa', 'metasel', 'gini', 'gini'],
            'trc': [0.5] * 6,
        })
        kept = summarizable(curves)
        self.assertEqual(sorted(set(kept['subject'])), ['a', 'b'])
        self.assertEqual(sorted(set(kept['method'])), ['gini', 'metasel'])


class TestPipeline(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = tiny_config(os.path.join(cls.tmp.name, 'a'))
        cls.run_dir = cmd_run(cls.config)
        cls.manifest = read_json(os.path.join(cls.run_dir, 'manifest.json'))
        cls.rejects = pd.read_csv(os.path.join(cls.run_dir, 'rejects.csv'))
        cls.failures = pd.read_csv(os.path.join(cls.run_dir, 'failures.csv'))
        cls.curves = pd.read_csv(os.path.join(cls.run_dir, 'curves.csv'))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def _ranking_path(self, subject, method):
        return os.path.join(self.run_dir, 'rankings', subject, method + '.csv')

    def test_subjects_are_admitted(self):
        admitted = self.manifest['subjects']
        self.assertGreater(len(admitted), 0)
        self.assertFalse(set(admitted) & set(self.rejects['subject']))
        calibration = pd.read_csv(os.path.join(self.run_dir, 'calibration.csv'))
        self.assertEqual(sorted(calibration['subject']), sorted(admitted))

    def test_every_subject_is_ranked_or_rejected(self):
        names = {self.config.subject_name(c, s) for c, s in self.config.shifts.cells()}
        self.assertEqual(set(self.manifest['subjects']) | set(self.rejects['subject']), names)
        self.assertTrue(set(self.rejects['reason']) <= {'inadmissible', 'no_misclassified'})
        failed = set(zip(self.failures['subject'], self.failures['method']))
        for name in self.manifest['subjects']:
            for method in METHODS:
                ranked = os.path.exists(self._ranking_path(name, method))
                self.assertNotEqual(ranked, (name, method) in failed, (name, method))

    def test_always_applicable_methods_rank(self):
        for name in self.manifest['subjects']:
            for method in ALWAYS_APPLICABLE:
                self.assertTrue(os.path.exists(self._ranking_path(name, method)), (name, method))

    def test_rankings_cover_the_test_set(self):
        for name, method in set(zip(self.curves['subject'], self.curves['method'])):
            frame = pd.read_csv(self._ranking_path(name, method))
            self.assertEqual(sorted(frame['input_id']), list(range(100)))
            self.assertTrue((frame['score'].diff().dropna() <= 0).all())
            self.assertTrue(os.path.exists(os.path.join(self.run_dir, 'models', name + '.msel')))

    def test_curves(self):
        pairs = set(zip(self.curves['subject'], self.curves['method']))
        self.assertEqual(len(self.curves), len(pairs) * 3)
        self.assertTrue(self.curves['trc'].between(0, 1).all())
        self.assertTrue((self.curves[self.curves['budget_pct'] == 100.0]['trc'] == 1.0).all())

    def test_metasel_outputs(self):
        ranked = set(self.curves[self.curves['method'] == 'metasel']['subject'])
        self.assertTrue(ranked)
        calibration = pd.read_csv(os.path.join(self.run_dir, 'calibration.csv')).set_index('subject')
        for name in ranked:
            self.assertTrue(os.path.exists(os.path.join(self.run_dir, 'features', name + '.csv')))
            mm = MetaModel.load(os.path.join(self.run_dir, 'metamodels', name + '.msel'))
            self.assertEqual(mm.odin_config, self.config.odin)
            self.assertAlmostEqual(mm.threshold, calibration.loc[name, 'threshold'])

    def test_manifest(self):
        self.assertEqual(self.manifest['run_id'], self.config.run_id)
        self.assertEqual(self.manifest['status'], 'partial' if len(self.failures) else 'complete')
        self.assertEqual(sorted(map(tuple, self.manifest['failed_tasks'])),
                         sorted(zip(self.failures['subject'], self.failures['method'])))
        self.assertFalse(os.path.exists(os.path.join(self.run_dir, FAILED_MARKER)))
        self.assertTrue(os.path.exists(os.path.join(self.run_dir, 'models', 'source.msel')))
        self.assertTrue(self.manifest['summary'])
        self.assertTrue(os.path.exists(os.path.join(self.run_dir, 'summary.csv')))

    def test_same_seed_same_results(self):
        other = cmd_run(tiny_config(os.path.join(self.tmp.name, 'b')))
        for name in ('curves.csv', 'rejects.csv', 'calibration.csv', 'failures.csv', 'summary.csv',
                     'distribution.csv'):
            self.assertEqual(read_bytes(os.path.join(self.run_dir, name)), read_bytes(os.path.join(other, name)),
                             name)
        for name in self.manifest['subjects']:
            path = os.path.join('rankings', name, 'gini.csv')
            self.assertEqual(read_bytes(os.path.join(self.run_dir, path)), read_bytes(os.path.join(other, path)))

    def test_report(self):
        report = cmd_report(self.run_dir)
        out = os.path.join(self.run_dir, 'report')
        for name in ('consolidated.csv', 'distribution.csv', 'wilcoxon.csv', 'severity.csv', 'timings.csv',
                     'summary.txt'):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)
        summary = pd.read_csv(os.path.join(self.run_dir, 'summary.csv'))
        self.assertEqual(len(report['consolidated']), len(summary))
        baselines = sorted(c[len('trc_'):] for c in summary.columns if c.startswith('trc_') and c != 'trc_metasel')
        self.assertEqual(report['wilcoxon']['baseline'].tolist(), baselines)
        self.assertTrue(report['wilcoxon']['n_pairs'].gt(0).all())
        subjects = summary['subject'].nunique()
        self.assertEqual(len(cmd_report(self.run_dir, budgets=[0.1])['consolidated']), subjects)

    def test_ablation(self):
        out = cmd_ablate(self.config)
        rows = pd.read_csv(os.path.join(out, 'ablation.csv'))
        subjects = set(self.manifest['subjects'])
        self.assertEqual(set(rows['subject']), subjects)
        self.assertEqual(len(rows), len(subjects) * 8 * 4)
        self.assertEqual(set(rows[rows['reference'].astype(bool)]['variant']), {'FULL'})
        for name in subjects:
            for variant in ('FULL', 'V6'):
                path = os.path.join(out, 'metamodels', name, variant + '.msel')
                self.assertTrue(os.path.exists(path) and os.path.exists(path + '.json'))
        self.assertTrue(os.path.exists(os.path.join(out, 'ablation_summary.csv')))


class TestDefaultGrid(unittest.TestCase):

    def test_default_grid_admits_subjects(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = load_config(DEFAULT_CONFIG).with_overrides(output_dir=tmp, methods=['metasel', 'gini'])
            run_dir = cmd_run(config)
            manifest = read_json(os.path.join(run_dir, 'manifest.json'))
            self.assertEqual(len(manifest['subjects']) + len(manifest['rejected']), 21)
            self.assertGreater(len(manifest['subjects']), 0)
            summary = pd.read_csv(os.path.join(run_dir, 'summary.csv'))
            self.assertGreater(len(summary), 0)
            self.assertEqual(set(summary['second_best_method']), {'gini'})


class TestReportErrors(unittest.TestCase):

    def test_missing_or_empty_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(OutputException):
                cmd_report(os.path.join(tmp, 'absent'))
            with self.assertRaises(OutputException):
                cmd_report(tmp)


if __name__ == '__main__':
    unittest.main()
