"""Center-crop preprocessing, stratified k-fold training and fold-ensemble
evaluation for normal vs. atypical mitotic figure classification."""

from .data import DatasetManifest, SampleRecord, class_balance, generate_synthetic_dataset, load_manifest
from .ensemble import PredictionRecord, decide, ensemble
from .metrics import ConfusionCounts, MetricsReport, balanced_accuracy, confusion, roc_auc
from .model import BackboneSpec, bce_with_logits, build_model
from .preprocess import AugmentPolicy, CropSpec, NormalizationStats, center_crop
from .splits import FoldAssignment, fold_split, stratified_kfold
from .train import TrainConfig, cosine_lr, clip_gradients, train_fold

__version__ = "0.1.0"
