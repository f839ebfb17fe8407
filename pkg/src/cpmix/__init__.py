"""Confusion-pairing mixup (CP-Mix) for long-tailed classification."""
from .nn import MlpClassifier, forward, predict, backward, cross_entropy_loss, balanced_softmax_loss
from .data import LabeledDataset, ToySpec, BlobsSpec, make_toy, make_blobs, exponential_imbalance
from .mixing import MixConfig
from .confusion import ConfusionMatrix, ConfusionPairBag, confusion_matrix
from .trainer import TrainSchedule, FinetuneConfig, train_erm, train_cpmix, train_vanilla_mixup
from .report import evaluate, MetricsReport

__version__ = "0.1.0"
