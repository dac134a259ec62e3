import os
import tempfile
import unittest

import numpy as np

from selection_tools.datagen import Dataset, Role
from selection_tools.errors import ConfigException, DimensionException, FormatException
from selection_tools.features import (FeatureRecord, differential_test, extract, extract_batch,
                                      read_feature_csv, records_to_frame, write_feature_csv)
from selection_tools.models import Classifier, Layer, LayerKind
from selection_tools.odin import OdinConfig, odin_score


def linear(weights, bias):
    '''A single dense layer over 2-D inputs with fixed parameters.'''
    layers = [Layer(LayerKind.DENSE, (2, len(bias)))]
    model = Classifier.build(layers, seed=0)
    model.params[0].data[...] = weights
    model.params[1].data[...] = bias
    return model


class TestExtract(unittest.TestCase):

    def setUp(self):
        # the source model favours class 0 when x0 > x1, the target model always class 2
        self.m_s = linear([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]], [0.0, 0.0, 0.0])
        self.m_t = linear([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]], [0.0, 0.0, 10.0])
        self.cfg = OdinConfig()

    def test_vector_layout(self):
        record = extract(self.m_s, self.m_t, [0.8, 0.2], self.cfg, ground_truth=0, input_id=7)
        vector = record.vector()
        self.assertEqual(len(vector), 3 * 3 + 3)
        np.testing.assert_allclose(vector[:3], [0.6, -0.6, 0.0])
        np.testing.assert_allclose(vector[3:6], [0.6, -0.6, 10.0])
        np.testing.assert_allclose(vector[6:9], [0.0, 0.0, 10.0])
        self.assertEqual(record.input_id, 7)
        self.assertAlmostEqual(record.odin_source, odin_score(self.m_s, [0.8, 0.2], self.cfg))

    def test_differential_test(self):
        self.assertEqual(differential_test(self.m_s, self.m_t, [0.8, 0.2]), 0)
        self.assertEqual(differential_test(self.m_s, self.m_s, [0.8, 0.2]), 1)

    def test_label_marks_target_misclassification(self):
        self.assertEqual(extract(self.m_s, self.m_t, [0.8, 0.2], self.cfg, ground_truth=2).label, 0)
        self.assertEqual(extract(self.m_s, self.m_t, [0.8, 0.2], self.cfg, ground_truth=0).label, 1)
        self.assertIsNone(extract(self.m_s, self.m_t, [0.8, 0.2], self.cfg).label)

    def test_class_count_mismatch(self):
        other = linear([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        with self.assertRaises(ConfigException):
            extract(self.m_s, other, [0.5, 0.5], self.cfg)

    def test_input_shape_mismatch(self):
        with self.assertRaises(DimensionException):
            extract(self.m_s, self.m_t, [0.5, 0.5, 0.5], self.cfg)

    def test_batch_keeps_order_and_ids(self):
        inputs = np.array([[0.9, 0.1], [0.1, 0.9], [0.5, 0.4]])
        d = Dataset(inputs, [2, 1, 0], Role.TARGET_TEST, 3).subset([2, 0, 1])
        records = extract_batch(self.m_s, self.m_t, d, self.cfg)
        self.assertEqual([r.input_id for r in records], [2, 0, 1])
        self.assertEqual([r.label for r in records], [1, 0, 1])
        self.assertEqual({r.origin for r in records}, {Role.TARGET_TEST.value})
        unlabeled = extract_batch(self.m_s, self.m_t, d, self.cfg, labeled=False)
        self.assertTrue(all(r.label is None for r in unlabeled))


class TestFeatureCsv(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.records = [
            FeatureRecord(3, np.array([1.5, -2.0]), np.array([0.25, 4.0]), np.array([1.25, 6.0]), 0, 0.5, 0.75, 1),
            FeatureRecord(9, np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([0.0, 0.0]), 1, 0.6, 0.6, 0),
        ]

    def test_columns(self):
        frame = records_to_frame(self.records)
        self.assertEqual(list(frame.columns), ['id', 'ls_0', 'ls_1', 'lt_0', 'lt_1', 'd_0', 'd_1',
                                               'diff_test', 'odin_s', 'odin_t', 'label'])

    def test_write_and_read(self):
        path = os.path.join(self.tmp.name, 'features.csv')
        write_feature_csv(self.records, path)
        loaded = read_feature_csv(path)
        self.assertEqual([r.input_id for r in loaded], [3, 9])
        self.assertEqual([r.label for r in loaded], [1, 0])
        for original, again in zip(self.records, loaded):
            np.testing.assert_allclose(again.vector(), original.vector())

    def test_not_a_feature_dump(self):
        path = os.path.join(self.tmp.name, 'other.csv')
        with open(path, 'w') as fh:
            fh.write('a,b\n1,2\n')
        with self.assertRaises(FormatException):
            read_feature_csv(path)


if __name__ == '__main__':
    unittest.main()
