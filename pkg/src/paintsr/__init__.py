"""Reference-based painting super-resolution with high-frequency texture
transfer, for large scale factors (8x, 16x)."""

__version__ = "0.1.0"

from .imaging import ColorSpace, ImageTensor, bicubic_resize, crop_aligned, \
    degrade_bicubic, down_up, load_image, save_image, to_luma
from .wavelet import WaveletBands, extract_hh, haar_forward, haar_inverse
from .features import FallbackExtractor, FeaturePyramid, GramMatrix, \
    Vgg19Extractor, extract_pyramid, get_extractor, gram
from .matching import MatchMap, TransferredFeature, match_features, \
    transfer_at_level, transfer_features
from .networks import NetworkParams, init_params, load_params, save_params
from .losses import LossReport, LossWeights, total_loss
from .dataset import PaintingRecord, TrainingTriple, ingest_manifest, \
    load_grouped_refs, make_triples, select_by_ppi
from .training import TrainConfig, pretrain_generator, super_resolve, \
    train_degrader, train_full
from .metrics import NiqeModel, fit_niqe, niqe, perceptual_index, psnr, ssim

__all__ = [
    "ColorSpace", "ImageTensor", "bicubic_resize", "crop_aligned",
    "degrade_bicubic", "down_up", "load_image", "save_image", "to_luma",
    "WaveletBands", "extract_hh", "haar_forward", "haar_inverse",
    "FallbackExtractor", "FeaturePyramid", "GramMatrix", "Vgg19Extractor",
    "extract_pyramid", "get_extractor", "gram",
    "MatchMap", "TransferredFeature", "match_features", "transfer_at_level",
    "transfer_features",
    "NetworkParams", "init_params", "load_params", "save_params",
    "LossReport", "LossWeights", "total_loss",
    "PaintingRecord", "TrainingTriple", "ingest_manifest", "load_grouped_refs",
    "make_triples", "select_by_ppi",
    "TrainConfig", "pretrain_generator", "super_resolve", "train_degrader",
    "train_full",
    "NiqeModel", "fit_niqe", "niqe", "perceptual_index", "psnr", "ssim",
]
