import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from core.utils.data_logger import ArtifactLogger

logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "model_dump"):
        return _jsonable(value.model_dump(mode="json"))
    return value


class RunStore:
    """一次运行的输出目录：JSON 报告、CSV 表、图和 summary.json"""

    def __init__(self, output_dir: Union[str, Path] = "results", config_hash: str = "", seed: Optional[int] = None):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.seed = seed
        self.session_dir: Optional[Path] = None
        self.written: List[Path] = []

    def start_session(self, label: str) -> Path:
        """开始新的运行目录 <output_dir>/<label>_<timestamp>"""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        safe = label.replace(":", "-").replace("/", "-")
        self.session_dir = self.output_dir / f"{safe}_{timestamp}"
        suffix = 1
        while self.session_dir.exists():
            self.session_dir = self.output_dir / f"{safe}_{timestamp}_{suffix}"
            suffix += 1
        self.session_dir.mkdir(parents=True)
        self.written = []
        logger.info(f"INFO - RunStore: session {self.session_dir}")
        return self.session_dir

    def path(self, name: str) -> Path:
        if self.session_dir is None:
            raise RuntimeError("start_session() must be called first")
        return self.session_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        target = self.path(name)
        body = _jsonable(payload)
        if isinstance(body, dict):
            body.setdefault("provenance", {"config_hash": self.config_hash, "seed": self.seed})
        with target.open("w", encoding="utf-8") as handle:
            json.dump(body, handle, indent=2, sort_keys=True, allow_nan=True)
        self.written.append(target)
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        table = ArtifactLogger(list(frame.columns), config_hash=self.config_hash, seed=self.seed)
        table.log_frame(frame)
        target = table.save_to_file(self.path(name))
        self.written.append(target)
        return target

    def register(self, target: Path) -> Path:
        self.written.append(Path(target))
        return Path(target)

    def artifacts(self) -> List[str]:
        return [p.name for p in self.written]

    def summary(self, payload: Dict[str, Any]) -> Path:
        body = dict(payload)
        body.setdefault("config_hash", self.config_hash)
        body.setdefault("seed", self.seed)
        body.setdefault("timestamp", datetime.now().isoformat(timespec="seconds"))
        body["artifacts"] = self.artifacts()
        return self.write_json("summary.json", body)
