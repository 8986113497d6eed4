"""Estimator checkpoints in the pair container format"""

from pathlib import Path

import numpy as np

from src.models.estimator import EstimatorParams
from src.utils.container import decode_sections, encode_sections
from src.utils.error_handler import ContainerFormatError
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)


def save_checkpoint(path, params: EstimatorParams) -> Path:
    blob = encode_sections([
        (b"HPAR", np.array([params.embedding_dim, params.candidate_k], dtype=np.uint32)),
        (b"EMBD", params.embedding.reshape(-1)),
        (b"LTMP", np.array([params.log_temperature])),
    ])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    logger.info(f"Checkpoint saved: {path} (d={params.embedding_dim}, tau={params.temperature:.4f})")
    return path


def load_checkpoint(path) -> EstimatorParams:
    path = Path(path)
    if not path.is_file():
        raise ContainerFormatError(f"Checkpoint not found: {path}")
    sections = decode_sections(path.read_bytes())
    missing = [tag.decode() for tag in (b"HPAR", b"EMBD", b"LTMP") if tag not in sections]
    if missing:
        raise ContainerFormatError(f"{path}: checkpoint lacks sections {missing}")
    hyper = sections[b"HPAR"]
    if hyper.shape != (2,):
        raise ContainerFormatError(f"{path}: HPAR must hold (embedding_dim, candidate_k)")
    embedding_dim, candidate_k = int(hyper[0]), int(hyper[1])
    embedding = sections[b"EMBD"]
    if embedding.shape != (3 * embedding_dim,) or sections[b"LTMP"].shape != (1,):
        raise ContainerFormatError(f"{path}: parameter sections inconsistent with HPAR")
    return EstimatorParams(embedding.reshape(3, embedding_dim).copy(), float(sections[b"LTMP"][0]), candidate_k)
