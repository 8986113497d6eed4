"""Dataset directories: one container per pair plus a JSON manifest"""

import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from src.synth.annotate import AnnotatedPair
from src.utils.container import read_frames, write_frames
from src.utils.error_handler import ContainerFormatError, DataValidationError
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)

MANIFEST = "manifest.json"
PAIR_DIR = "pairs"


class DatasetStore:
    """Pair containers under `<root>/pairs/` indexed by `<root>/manifest.json`"""

    def __init__(self, root: str):
        self.root = Path(root)
        self._manifest: Optional[Dict[str, Any]] = None

    def _ensure_directory(self):
        (self.root / PAIR_DIR).mkdir(parents=True, exist_ok=True)

    def pair_path(self, index: int) -> Path:
        return self.root / PAIR_DIR / f"pair_{index:05d}.gsf"

    def write(self, pairs: List[AnnotatedPair], manifest: Dict[str, Any]) -> Path:
        """Write every pair and the manifest; pair entries are appended to `manifest`"""
        self._ensure_directory()
        entries = []
        for index, pair in enumerate(pairs):
            path = write_frames(self.pair_path(index), pair.first, pair.second, pair.flow)
            entries.append({
                "file": str(path.relative_to(self.root)),
                "points": len(pair.first),
                "ground_ids": list(pair.ground_ids),
            })
        document = dict(manifest)
        document["pairs"] = entries
        manifest_path = self.root / MANIFEST
        manifest_path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
        self._manifest = document
        logger.info(f"Dataset written: {len(pairs)} pairs under {self.root}")
        return manifest_path

    @property
    def manifest(self) -> Dict[str, Any]:
        if self._manifest is None:
            path = self.root / MANIFEST
            if not path.is_file():
                raise DataValidationError(f"No dataset manifest at {path}")
            try:
                self._manifest = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                raise ContainerFormatError(f"Malformed manifest {path}: {e}") from e
        return self._manifest

    def __len__(self) -> int:
        return len(self.manifest.get("pairs", []))

    def load(self, index: int) -> AnnotatedPair:
        entry = self.manifest["pairs"][index]
        first, second, flow = read_frames(self.root / entry["file"])
        if second is None or flow is None:
            raise ContainerFormatError(f"{entry['file']}: dataset pairs need PTS2 and FLOW sections")
        return AnnotatedPair(first, second, flow, tuple(entry.get("ground_ids", ())))

    def pairs(self) -> Iterator[AnnotatedPair]:
        for index in range(len(self)):
            yield self.load(index)

    def load_all(self) -> List[AnnotatedPair]:
        return list(self.pairs())
