'''The learned misclassification-probability estimator over paired-model features.

A MetaModel scores a FeatureRecord with a small network: a 1-D convolution over the
active logit channels (L_S, L_T, |L_S - L_T|, each C long), flattened and joined with
the active scalar features (diff_test, ODIN_S, ODIN_T), then FC 32 -> relu -> FC 1,
read through a sigmoid.
'''
import json
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit
from sklearn.model_selection import train_test_split
from sklearn.utils.class_weight import compute_class_weight

from .errors import ConfigException, DataException
from .evaluation import Ranking
from .features import CHANNEL_GROUPS, SCALAR_GROUPS, extract_batch
from .models import (Classifier, Layer, LayerKind, TrainConfig, from_bytes,
                     sgd_epochs, to_bytes)
from .odin import OdinConfig
from .tensor import Tensor, binary_cross_entropy_with_logits

logger = logging.getLogger(__name__)

DEFAULT_META_CONFIG = TrainConfig(epochs=200, learning_rate=0.01, momentum=0.9, batch_size=32, seed=0)


class Variant(Enum):
    FULL = 'FULL'
    V1 = 'V1'
    V2 = 'V2'
    V3 = 'V3'
    V4 = 'V4'
    V5 = 'V5'
    V6 = 'V6'
    V7 = 'V7'

    @property
    def excluded(self):
        return EXCLUDED_GROUPS[self]


EXCLUDED_GROUPS = {
    Variant.FULL: (),
    Variant.V1: ('diff',),
    Variant.V2: ('diff_test',),
    Variant.V3: ('odin_s',),
    Variant.V4: ('odin_s', 'odin_t'),
    Variant.V5: ('ls', 'diff'),
    Variant.V6: ('ls', 'lt', 'diff'),
    Variant.V7: ('ls', 'diff', 'diff_test', 'odin_s'),
}


@dataclass(frozen=True)
class FeatureMask:
    channels: tuple
    scalars: tuple

    @classmethod
    def for_variant(cls, variant):
        excluded = set(Variant(variant).excluded)
        return cls(tuple(g for g in CHANNEL_GROUPS if g not in excluded),
                   tuple(g for g in SCALAR_GROUPS if g not in excluded))

    def width(self, num_classes):
        return len(self.channels) * num_classes + len(self.scalars)


def meta_layers(mask, num_classes, kernels=8, kernel_width=3, hidden=32):
    layers = []
    if mask.channels:
        k = min(kernel_width, num_classes)
        length = num_classes - k + 1
        layers += [
            Layer(LayerKind.CONV1D, (num_classes, len(mask.channels), k, kernels)),
            Layer(LayerKind.RELU, (length * kernels,)),
            Layer(LayerKind.FLATTEN, (length, kernels)),
        ]
        width = length * kernels
        if mask.scalars:
            layers.append(Layer(LayerKind.CONCAT, (len(mask.scalars),)))
            width += len(mask.scalars)
    else:
        width = len(mask.scalars)
    layers += [
        Layer(LayerKind.DENSE, (width, hidden)),
        Layer(LayerKind.RELU, (hidden,)),
        Layer(LayerKind.DENSE, (hidden, 1)),
    ]
    return layers


class MetaModel:

    def __init__(self, net, variant, num_classes, channel_mean, channel_std,
                 odin_config=None, threshold=None):
        self.net = net
        self.variant = Variant(variant)
        self.mask = FeatureMask.for_variant(self.variant)
        self.num_classes = num_classes
        self.channel_mean = np.asarray(channel_mean, dtype=np.float64).reshape(len(self.mask.channels), num_classes)
        self.channel_std = np.asarray(channel_std, dtype=np.float64).reshape(len(self.mask.channels), num_classes)
        self.odin_config = odin_config
        self.threshold = threshold

    @property
    def input_width(self):
        return self.mask.width(self.num_classes)

    def encode(self, records):
        '''Network inputs for records: standardized channels (N, C, channels) and raw scalars.'''
        for r in records:
            if r.num_classes != self.num_classes:
                raise ConfigException("record has {} logits, model expects {}".format(r.num_classes, self.num_classes))
        return encode(records, self.mask, self.channel_mean, self.channel_std)

    def logits(self, records):
        channels, scalars = self.encode(records)
        if self.mask.channels:
            aux = scalars if self.mask.scalars else None
            return self.net.outputs(channels, aux=aux).logits[:, 0]
        return self.net.outputs(scalars).logits[:, 0]

    def score_batch(self, records):
        if not records:
            return np.zeros(0)
        return expit(self.logits(records))

    def sidecar(self):
        return {
            'variant': self.variant.value,
            'feature_mask': {'channels': list(self.mask.channels), 'scalars': list(self.mask.scalars)},
            'num_classes': self.num_classes,
            'normalization': {'mean': self.channel_mean.tolist(), 'std': self.channel_std.tolist()},
            'odin': None if self.odin_config is None else {
                'temperature': self.odin_config.temperature, 'epsilon': self.odin_config.epsilon},
            'calibration_threshold': self.threshold,
        }

    def save(self, path):
        '''Weights in the MSEL model format at `path`, everything else in `path`.json.'''
        with open(path, 'wb') as fh:
            fh.write(to_bytes(self.net))
        with open(str(path) + '.json', 'w') as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as fh:
            net = from_bytes(fh.read())
        with open(str(path) + '.json') as fh:
            meta = json.load(fh)
        odin = OdinConfig(**meta['odin']) if meta.get('odin') else None
        return cls(net, meta['variant'], meta['num_classes'], meta['normalization']['mean'],
                   meta['normalization']['std'], odin, meta.get('calibration_threshold'))


def encode(records, mask, mean=None, std=None):
    n, c = len(records), records[0].num_classes if records else 0
    channels = np.zeros((n, c, len(mask.channels)))
    for j, group in enumerate(mask.channels):
        values = np.array([r.channel(group) for r in records]).reshape(n, c)
        if mean is not None:
            values = (values - mean[j]) / std[j]
        channels[:, :, j] = values
    scalars = np.array([[r.scalar(g) for g in mask.scalars] for r in records]).reshape(n, len(mask.scalars))
    return channels, scalars


def normalization_stats(records, mask):
    '''Per-column mean and std of every active logit channel; zero std is replaced by 1.'''
    channels, _ = encode(records, mask)
    mean = channels.mean(axis=0).T
    std = channels.std(axis=0).T
    std[std == 0] = 1.0
    return mean, std


def build_training_set(train_t, test_s, m_s, m_t, odin_cfg, cal):
    '''Records for every target training input plus the source test inputs whose
    target-model ODIN score reaches the calibrated threshold. Labels are 1 where the
    target model misclassifies.'''
    records = extract_batch(m_s, m_t, train_t, odin_cfg, origin='target_train')
    source = extract_batch(m_s, m_t, test_s, odin_cfg, origin='source_test')
    kept = [r for r in source if r.odin_target >= cal.threshold]
    logger.info("meta training set: %d target training inputs, %d of %d source test inputs kept",
                len(records), len(kept), len(source))
    records = records + kept
    if not records:
        raise DataException("MetaSel training set is empty")
    return records


def _bce(logits, targets, weights, tape=None):
    return binary_cross_entropy_with_logits(logits, targets, weights, tape=tape)


def _validation_loss(net, inputs, aux, targets, weights):
    logits, _ = net.forward(Tensor.wrap(inputs), aux=None if aux is None else Tensor.wrap(aux))
    return _bce(logits, targets, weights).item()


def train_metamodel(records, variant=Variant.FULL, cfg=DEFAULT_META_CONFIG, patience=10,
                    validation_fraction=0.2, kernels=8, kernel_width=3, hidden=32):
    '''Trains a MetaModel with inverse-frequency class weights and early stopping on a
    seeded stratified validation split.
    args:
        records: labeled FeatureRecords with both classes present.
        variant: which feature groups are active.
        cfg: TrainConfig; cfg.epochs is the epoch cap.
        patience: epochs without validation improvement before stopping.
    returns:
        MetaModel keeping the parameters of the best validation epoch.
    '''
    if not records or any(r.label is None for r in records):
        raise DataException("meta-model training needs labeled records")
    labels = np.array([r.label for r in records])
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataException("meta-model training data holds a single class ({})".format(classes[0]))

    variant = Variant(variant)
    mask = FeatureMask.for_variant(variant)
    num_classes = records[0].num_classes
    mean, std = normalization_stats(records, mask)
    channels, scalars = encode(records, mask, mean, std)
    if mask.channels:
        inputs, aux = channels, (scalars if mask.scalars else None)
    else:
        inputs, aux = scalars, None

    weights = compute_class_weight('balanced', classes=classes, y=labels)[np.searchsorted(classes, labels)]
    indices = np.arange(len(records))
    try:
        fit_idx, val_idx = train_test_split(indices, test_size=validation_fraction, random_state=cfg.seed,
                                            stratify=labels)
    except ValueError:
        # too few minority records to stratify
        fit_idx, val_idx = train_test_split(indices, test_size=validation_fraction, random_state=cfg.seed)

    net = Classifier.build(meta_layers(mask, num_classes, kernels, kernel_width, hidden), seed=cfg.seed)

    def part(array, idx):
        return None if array is None else array[idx]

    best_loss, best_params, stale = np.inf, [p.copy() for p in net.params], 0
    for epoch in sgd_epochs(net, inputs[fit_idx], labels[fit_idx], cfg, _bce,
                            weights=weights[fit_idx], aux=part(aux, fit_idx)):
        loss = _validation_loss(net, inputs[val_idx], part(aux, val_idx), labels[val_idx], weights[val_idx])
        if loss < best_loss - 1e-12:
            best_loss, best_params, stale = loss, [p.copy() for p in net.params], 0
        else:
            stale += 1
            if stale >= patience:
                logger.debug("early stop at epoch %d, best validation loss %.5f", epoch + 1, best_loss)
                break

    net = Classifier(net.layers, best_params)
    logger.info("trained %s meta-model on %d records (%d misclassified), input width %d",
                variant.value, len(records), int(labels.sum()), mask.width(num_classes))
    return MetaModel(net, variant, num_classes, mean, std)


def score(mm, record):
    return float(mm.score_batch([record])[0])


def rank_targets(mm, target_test, m_s, m_t, odin_cfg, subject=''):
    '''Unlabeled target test inputs ordered by estimated misclassification probability.'''
    records = extract_batch(m_s, m_t, target_test, odin_cfg, labeled=False)
    return Ranking.from_scores(target_test.ids, mm.score_batch(records), 'metasel', subject)
