"""soundloom: an eight-channel generative sound engine.

Log-mel audio is tokenized by a patch VQ codec, a masked transformer
fills in token grids under text and audio guidance, and a streamer
outpaints 10-second segments with 5-second overlaps into a continuous
multi-channel stream.
"""

__version__ = "0.1.0"

from .codec import Codebook, TokenGrid, patchify, train_codebook, unpatchify, vq_decode, vq_encode
from .conditioning import CondEmbedding, embed_audio, embed_text, null_embedding
from .dsp import MelSpectrogram, StftConfig, Waveform, mel_to_wav, resample, wav_to_mel
from .generator import (
    GeneratorConfig,
    MaskSchedule,
    MaskedTokenModel,
    cfg_combine,
    iterative_decode,
    mask_ratio,
    predict_masked,
    train_masked,
)
from .streamer import ChannelState, OutpaintPlan, crossfade, outpaint_step, run_stream
