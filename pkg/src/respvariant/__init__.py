"""Respiratory-sound analysis toolkit: features, rank statistics, BLSTM
classifiers and fused three-class decisions for healthy / delta / omicron
subject pools."""

from .evaluation import confusion_3class, fuse, hierarchical_classify, roc_auc, sensitivity_at_specificity
from .features import append_deltas, average_vector, extract_features, log_compress, mel_project, stft_power
from .frontend import AudioClip, decode, normalize, preprocess, resample, sad_gate
from .ingest import Category, SoundCategory, SubjectRecord, filter_subjects, load_manifest, make_splits, odds_ratios
from .neural import BlstmModel, TrainConfig, segment_file, train
from .stats import compare_populations, hmp, mann_whitney_u

__version__ = "0.1.0"
