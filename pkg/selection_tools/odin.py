'''ODIN out-of-distribution scores and 95%-TPR threshold calibration.'''
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import ConfigException, DataException, DimensionException
from .tensor import GradTape, Tensor, backward, scale, softmax_cross_entropy

logger = logging.getLogger(__name__)

TARGET_TPR = 0.95


@dataclass(frozen=True)
class OdinConfig:
    temperature: float = 1000.0
    epsilon: float = 0.0014

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigException("ODIN temperature must be > 0, got {}".format(self.temperature))
        if not self.epsilon >= 0:
            raise ConfigException("ODIN epsilon must be >= 0, got {}".format(self.epsilon))


@dataclass(frozen=True)
class OdinCalibration:
    threshold: float
    achieved_tpr: float
    achieved_fpr: float


def _check_inputs(m, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if tuple(inputs.shape[1:]) != m.input_shape:
        raise DimensionException("inputs of shape {} do not match model input {}".format(
            inputs.shape[1:], m.input_shape))
    return inputs


def input_gradient(m, inputs, cfg):
    '''Gradient w.r.t. the inputs of the summed cross-entropy between the
    temperature-scaled logits and each input's own predicted class.'''
    inputs = _check_inputs(m, inputs)
    tape = GradTape()
    x = tape.watch(Tensor(inputs))
    logits, _ = m.forward(x, tape=tape)
    predicted = np.argmax(logits.data, axis=1)
    loss = softmax_cross_entropy(scale(logits, 1.0 / cfg.temperature, tape=tape), predicted,
                                 reduction='sum', tape=tape)
    backward(loss)
    return x.grad


def odin_scores(m, inputs, cfg, batch_size=256):
    '''ODIN scores for a batch of inputs: step each input by epsilon against the sign of
    the cross-entropy gradient (raising the temperature-scaled max softmax), clip to
    [0, 1], and return the max softmax of logits / T at the perturbed input.
    Scores lie in (0, 1]; higher means more in-distribution.'''
    inputs = _check_inputs(m, inputs)
    scores = []
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start:start + batch_size]
        if cfg.epsilon > 0:
            chunk = np.clip(chunk - cfg.epsilon * np.sign(input_gradient(m, chunk, cfg)), 0.0, 1.0)
        logits = m.outputs(chunk, batch_size=batch_size).logits
        scores.append(softmax(logits / cfg.temperature, axis=1).max(axis=1))
    return np.concatenate(scores) if scores else np.zeros(0)


def odin_score(m, x, cfg):
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return float(odin_scores(m, x[None], cfg)[0])


def calibrate_threshold(id_scores, ood_scores, tpr=TARGET_TPR):
    '''Largest threshold keeping at least `tpr` of the in-distribution scores at or above it.
    returns:
        OdinCalibration with the achieved TPR on id_scores and FPR on ood_scores.
    '''
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise DataException("calibration needs non-empty ID and OOD score lists")

    ordered = np.sort(id_scores)[::-1]
    keep = math.ceil(tpr * len(ordered) - 1e-9)
    threshold = float(ordered[max(keep, 1) - 1])
    achieved_tpr = float(np.mean(id_scores >= threshold))
    achieved_fpr = float(np.mean(ood_scores >= threshold))
    logger.debug("ODIN threshold %.8f: TPR %.3f FPR %.3f", threshold, achieved_tpr, achieved_fpr)
    return OdinCalibration(threshold, achieved_tpr, achieved_fpr)


def is_in_distribution(score, cal):
    return score >= cal.threshold


def shuffled_pixels(inputs, seed):
    '''OOD proxy: every image with its pixels independently permuted.'''
    inputs = np.asarray(inputs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    flat = inputs.reshape(len(inputs), -1)
    shuffled = np.stack([row[rng.permutation(row.size)] for row in flat]) if len(flat) else flat
    return shuffled.reshape(inputs.shape)


def calibrate_model(m, validation, cfg, seed):
    '''Calibrates on the model's ID validation images against their pixel-shuffled copies.'''
    id_scores = odin_scores(m, validation.inputs, cfg)
    ood_scores = odin_scores(m, shuffled_pixels(validation.inputs, seed), cfg)
    return calibrate_threshold(id_scores, ood_scores)
