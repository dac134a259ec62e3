from .config import ExperimentConfig, load_config
from .datagen import Dataset, ShiftSpec
from .evaluation import Ranking
from .features import FeatureRecord
from .metasel import MetaModel, Variant
from .models import Classifier, TrainConfig
from .odin import OdinConfig
from .tensor import GradTape, Tensor
