"""Multi-stage multi-codebook vector quantization toolkit."""

from .associate import AssociateModel, CompactCode, compress, global_embedding, reconstruct
from .dsp import FeatureSequence, StftParams, WaveformBuffer, log_mel_spectrogram, mel_cepstral_distortion
from .mhvq import MultiHeadCodebook, dequantize, ema_update, init_codebook, quantize, quantize_sequence, train_codebook
from .msmc import MSMCR, StageConfig, StageGeometry, align_concat, decode, encode

__version__ = "0.1.0"
