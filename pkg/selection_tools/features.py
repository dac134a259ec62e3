import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigException, DimensionException, FormatException
from .odin import odin_scores
from .tensor import Tensor

logger = logging.getLogger(__name__)

CHANNEL_GROUPS = ('ls', 'lt', 'diff')
SCALAR_GROUPS = ('diff_test', 'odin_s', 'odin_t')
FEATURE_GROUPS = CHANNEL_GROUPS + SCALAR_GROUPS


@dataclass(frozen=True)
class FeatureRecord:
    input_id: int
    logits_source: np.ndarray
    logits_target: np.ndarray
    logit_abs_diff: np.ndarray
    diff_test: int
    odin_source: float
    odin_target: float
    label: Optional[int] = None
    origin: str = ''

    @property
    def num_classes(self):
        return len(self.logits_target)

    def channel(self, group):
        return {'ls': self.logits_source, 'lt': self.logits_target, 'diff': self.logit_abs_diff}[group]

    def scalar(self, group):
        return {'diff_test': float(self.diff_test), 'odin_s': self.odin_source, 'odin_t': self.odin_target}[group]

    def vector(self):
        '''ls, lt, |ls - lt|, diff_test, odin_s, odin_t: 3C + 3 numbers.'''
        return np.concatenate([self.logits_source, self.logits_target, self.logit_abs_diff,
                               [self.diff_test, self.odin_source, self.odin_target]])


def _check_pair(m_s, m_t):
    if m_s.num_classes != m_t.num_classes:
        raise ConfigException("source model has {} classes, target model {}".format(m_s.num_classes, m_t.num_classes))
    if m_s.input_shape != m_t.input_shape:
        raise DimensionException("models take inputs {} and {}".format(m_s.input_shape, m_t.input_shape))


def differential_test(m_s, m_t, x):
    '''1 when both models predict the same class for x, else 0.'''
    _check_pair(m_s, m_t)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)[None]
    return int(m_s.outputs(x).predicted[0] == m_t.outputs(x).predicted[0])


def _records(m_s, m_t, inputs, ids, odin_cfg, ground_truth=None, origin=''):
    _check_pair(m_s, m_t)
    out_s = m_s.outputs(inputs)
    out_t = m_t.outputs(inputs)
    odin_s = odin_scores(m_s, inputs, odin_cfg)
    odin_t = odin_scores(m_t, inputs, odin_cfg)

    records = []
    for i, input_id in enumerate(ids):
        label = None
        if ground_truth is not None:
            label = int(out_t.predicted[i] != ground_truth[i])
        records.append(FeatureRecord(
            input_id=int(input_id),
            logits_source=out_s.logits[i],
            logits_target=out_t.logits[i],
            logit_abs_diff=np.abs(out_s.logits[i] - out_t.logits[i]),
            diff_test=int(out_s.predicted[i] == out_t.predicted[i]),
            odin_source=float(odin_s[i]),
            odin_target=float(odin_t[i]),
            label=label,
            origin=origin,
        ))
    return records


def extract(m_s, m_t, x, odin_cfg, ground_truth=None, input_id=0):
    '''Feature record for one input; label = 1 when the target model misclassifies it.'''
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if tuple(x.shape) != m_t.input_shape:
        raise DimensionException("input shape {} does not match {}".format(tuple(x.shape), m_t.input_shape))
    truth = None if ground_truth is None else [ground_truth]
    return _records(m_s, m_t, x[None], [input_id], odin_cfg, truth)[0]


def extract_batch(m_s, m_t, d, odin_cfg, labeled=True, origin=''):
    '''One record per dataset item, in dataset order, keyed by the item's id.'''
    truth = d.labels if labeled else None
    return _records(m_s, m_t, d.inputs, d.ids, odin_cfg, truth, origin or d.role.value)


def records_to_frame(records):
    if not records:
        return pd.DataFrame(columns=['id', 'diff_test', 'odin_s', 'odin_t', 'label'])
    c = records[0].num_classes
    columns = (['id'] + ['ls_{}'.format(i) for i in range(c)] + ['lt_{}'.format(i) for i in range(c)]
               + ['d_{}'.format(i) for i in range(c)] + ['diff_test', 'odin_s', 'odin_t', 'label'])
    rows = []
    for r in records:
        rows.append([r.input_id] + list(r.vector()) + [r.label if r.label is not None else ''])
    frame = pd.DataFrame(rows, columns=columns)
    frame['id'] = frame['id'].astype(int)
    frame['diff_test'] = frame['diff_test'].astype(int)
    return frame


def write_feature_csv(records, path):
    records_to_frame(records).to_csv(path, index=False)


def read_feature_csv(path):
    frame = pd.read_csv(path, keep_default_na=False)
    ls = [c for c in frame.columns if c.startswith('ls_')]
    if not ls or 'odin_t' not in frame.columns:
        raise FormatException("{} is not a feature dump".format(path))
    c = len(ls)
    records = []
    for _, row in frame.iterrows():
        label = row['label']
        records.append(FeatureRecord(
            input_id=int(row['id']),
            logits_source=row[['ls_{}'.format(i) for i in range(c)]].to_numpy(dtype=np.float64),
            logits_target=row[['lt_{}'.format(i) for i in range(c)]].to_numpy(dtype=np.float64),
            logit_abs_diff=row[['d_{}'.format(i) for i in range(c)]].to_numpy(dtype=np.float64),
            diff_test=int(row['diff_test']),
            odin_source=float(row['odin_s']),
            odin_target=float(row['odin_t']),
            label=None if label == '' else int(label),
        ))
    return records
