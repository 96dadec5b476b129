"""Generator checkpoints: config header + flat weight tensors in one npz.

A checkpoint records the content hash of the codebook it was trained
against; loading verifies the pairing so mixed-version codec/generator
artifacts fail loudly instead of decoding garbage.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from ..errors import CheckpointError
from .model import GeneratorConfig, MaskedTokenModel

MODEL_FORMAT_VERSION = 1


def save_model(path, model: MaskedTokenModel, codec_sha: str | None = None):
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": dataclasses.asdict(model.config),
        "dtype": model.dtype.name,
        "codec_sha256": codec_sha,
    }
    arrays = {f"param::{k}": v for k, v in model.params.items()}
    np.savez(path, header=json.dumps(header), **arrays)


def load_model(path, expect_codec_sha: str | None = None) -> MaskedTokenModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            params = {
                k[len("param::"):]: z[k] for k in z.files if k.startswith("param::")
            }
    except FileNotFoundError:
        raise CheckpointError(f"model checkpoint not found: {path}") from None
    except Exception as e:
        raise CheckpointError(f"cannot read model checkpoint {path}: {e}") from e
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise CheckpointError(
            f"model format version {header.get('format_version')} is not "
            f"supported (expected {MODEL_FORMAT_VERSION})"
        )
    stored = header.get("codec_sha256")
    if expect_codec_sha is not None and stored is not None and stored != expect_codec_sha:
        raise CheckpointError(
            "model checkpoint was trained against a different codebook "
            f"(checkpoint {stored[:12]}..., loaded {expect_codec_sha[:12]}...)"
        )
    cfg_kwargs = dict(header["config"])
    cfg_kwargs["grid"] = tuple(cfg_kwargs["grid"])
    config = GeneratorConfig(**cfg_kwargs)
    model = MaskedTokenModel(config, dtype=np.dtype(header["dtype"]), params=params)
    model.codec_sha256 = stored
    return model
