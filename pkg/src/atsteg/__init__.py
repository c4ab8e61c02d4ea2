"""Unsupervised targeted steganalysis.

Detects least-significant-bit matching payloads without any external
training data: the testing set is re-embedded to manufacture its own
training material, so the detector cannot be mismatched to the image
source. Also included: payload-rate estimation by partition geometry,
streaming classification with per-image confidence, and a reproducible
experiment harness.
"""

from .ats import AtsReport, ats_classify, ats_run, disjointness_probe
from .features import FeatureParams, extract_corpus, extract_spam
from .image_io import GrayImage, clip_center, load_image, save_pgm, synth_cover
from .learner import LearnerParams, SvmModel, grid_search, load_model, predict, save_model, train_gsvm
from .quantify import StreamState, confidence, search_bitrate, stream_add
from .stego import EmbedConfig, apply_splitting, change_rate, lsbm_embed

__version__ = "0.1.0"

__all__ = [
    "AtsReport",
    "EmbedConfig",
    "FeatureParams",
    "GrayImage",
    "LearnerParams",
    "StreamState",
    "SvmModel",
    "apply_splitting",
    "ats_classify",
    "ats_run",
    "change_rate",
    "clip_center",
    "confidence",
    "disjointness_probe",
    "extract_corpus",
    "extract_spam",
    "grid_search",
    "load_image",
    "load_model",
    "lsbm_embed",
    "predict",
    "save_model",
    "save_pgm",
    "search_bitrate",
    "stream_add",
    "synth_cover",
    "train_gsvm",
]
