"""Binary pair container, estimator checkpoints and ASCII PLY export.

Layout (little-endian): magic b"GSF1", u16 version, then sections of
4-byte tag, u64 element count, payload.
"""

import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.geometry.core import FlowField, PointCloud
from src.utils.error_handler import ContainerFormatError
from src.utils.logger_setup import setup_logger
from src.utils.validators import NO_LABEL

logger = setup_logger(__name__)

MAGIC = b"GSF1"
VERSION = 1
NONE_LABEL = 0xFFFFFFFF

# tag -> (dtype, values per element)
SECTION_LAYOUT: Dict[bytes, Tuple[str, int]] = {
    b"PTS1": ("<f4", 3),
    b"PTS2": ("<f4", 3),
    b"FLOW": ("<f4", 3),
    b"LBL1": ("<u4", 1),
    b"HPAR": ("<u4", 1),
    b"EMBD": ("<f8", 1),
    b"LTMP": ("<f8", 1),
}

_HEADER = struct.Struct("<4sH")
_SECTION = struct.Struct("<4sQ")


def encode_sections(sections: List[Tuple[bytes, np.ndarray]]) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION)]
    for tag, values in sections:
        if tag not in SECTION_LAYOUT:
            raise ContainerFormatError(f"Unknown section tag {tag!r}")
        dtype, width = SECTION_LAYOUT[tag]
        payload = np.ascontiguousarray(np.asarray(values).astype(dtype, copy=False)).reshape(-1)
        if payload.size % width:
            raise ContainerFormatError(f"Section {tag.decode()} has a partial element")
        chunks.append(_SECTION.pack(tag, payload.size // width))
        chunks.append(payload.tobytes())
    return b"".join(chunks)


def decode_sections(blob: bytes) -> Dict[bytes, np.ndarray]:
    if len(blob) < _HEADER.size:
        raise ContainerFormatError("Container shorter than its header")
    magic, version = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"Bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"Unsupported container version {version}")

    sections: Dict[bytes, np.ndarray] = {}
    offset = _HEADER.size
    while offset < len(blob):
        if offset + _SECTION.size > len(blob):
            raise ContainerFormatError("Truncated section header")
        tag, count = _SECTION.unpack_from(blob, offset)
        offset += _SECTION.size
        if tag not in SECTION_LAYOUT:
            raise ContainerFormatError(f"Unknown section tag {tag!r}")
        if tag in sections:
            raise ContainerFormatError(f"Duplicate section {tag.decode()}")
        dtype, width = SECTION_LAYOUT[tag]
        size = np.dtype(dtype).itemsize * width * count
        if offset + size > len(blob):
            raise ContainerFormatError(f"Section {tag.decode()} truncated")
        values = np.frombuffer(blob, dtype=dtype, count=count * width, offset=offset)
        sections[tag] = values.reshape(count, 3) if width == 3 else values
        offset += size
    return sections


def _labels_to_u32(labels: np.ndarray) -> np.ndarray:
    return np.where(labels == NO_LABEL, NONE_LABEL, labels).astype("<u4")


def _labels_from_u32(values: np.ndarray) -> np.ndarray:
    labels = values.astype(np.int64)
    labels[values == NONE_LABEL] = NO_LABEL
    return labels


def write_frames(path, first: PointCloud, second: Optional[PointCloud] = None,
                 flow: Optional[FlowField] = None) -> Path:
    """Write a first frame with optional second frame and flow"""
    if flow is not None:
        flow.check_anchor(first)
    sections = [(b"PTS1", first.points)]
    if second is not None:
        sections.append((b"PTS2", second.points))
    if flow is not None:
        sections.append((b"FLOW", flow.vectors))
    if first.labels is not None:
        sections.append((b"LBL1", _labels_to_u32(first.labels)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sections(sections))
    return path


def read_frames(path) -> Tuple[PointCloud, Optional[PointCloud], Optional[FlowField]]:
    path = Path(path)
    if not path.is_file():
        raise ContainerFormatError(f"Container not found: {path}")
    sections = decode_sections(path.read_bytes())
    if b"PTS1" not in sections:
        raise ContainerFormatError(f"{path}: missing PTS1 section")
    points = sections[b"PTS1"].astype(np.float64)
    labels = None
    if b"LBL1" in sections:
        if sections[b"LBL1"].shape[0] != points.shape[0]:
            raise ContainerFormatError(f"{path}: LBL1 count differs from PTS1")
        labels = _labels_from_u32(sections[b"LBL1"])
    flow = None
    if b"FLOW" in sections:
        if sections[b"FLOW"].shape[0] != points.shape[0]:
            raise ContainerFormatError(f"{path}: FLOW count differs from PTS1")
        flow = FlowField(sections[b"FLOW"].astype(np.float64))
    second = PointCloud(sections[b"PTS2"].astype(np.float64)) if b"PTS2" in sections else None
    return PointCloud(points, labels), second, flow


def write_flow(path, first: PointCloud, flow: FlowField) -> Path:
    """Prediction file: anchor points and flow"""
    return write_frames(path, PointCloud(first.points), flow=flow)


def write_ply(path, points: np.ndarray, labels: Optional[np.ndarray] = None) -> Path:
    """ASCII PLY point export for external viewers"""
    points = np.asarray(points, dtype=np.float64)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if labels is not None:
        header.append("property int label")
    header.append("end_header")
    if labels is not None:
        rows = [f"{x:.6f} {y:.6f} {z:.6f} {int(l)}" for (x, y, z), l in zip(points, labels)]
    else:
        rows = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in points]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(header + rows) + "\n")
    logger.debug(f"Wrote {points.shape[0]} points to {path}")
    return path
