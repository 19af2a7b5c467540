import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

logger = logging.getLogger(__name__)


class ArtifactLogger:
    def __init__(self, columns: Optional[List[str]] = None, config_hash: str = "", seed: Optional[int] = None):
        """按行累积结果表

        Args:
            columns: 固定列顺序；None 时按首次出现的键
            config_hash: 写入 CSV 头注释
            seed: 写入 CSV 头注释
        """
        self.columns = list(columns) if columns else None
        self.config_hash = config_hash
        self.seed = seed
        self.rows: List[Dict[str, Any]] = []

    def log_row(self, **values: Any):
        """记录一行"""
        if self.columns is not None:
            unknown = set(values) - set(self.columns)
            if unknown:
                raise ValueError(f"unknown columns {sorted(unknown)}")
        self.rows.append(values)

    def log_frame(self, frame: pd.DataFrame):
        for record in frame.to_dict(orient="records"):
            self.log_row(**record)

    def get_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def header(self) -> str:
        parts = [f"config_hash={self.config_hash}"]
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        return "# " + " ".join(parts) + "\n"

    def save_to_file(self, filename: Union[str, Path]) -> Path:
        """保存到文件

        Args:
            filename: .csv（带来源注释头，浮点全精度）或 .json
        """
        path = Path(filename)
        frame = self.get_frame()
        if path.suffix == ".csv":
            with path.open("w", encoding="utf-8", newline="") as handle:
                handle.write(self.header())
                frame.to_csv(handle, index=False, float_format="%.17g")
        elif path.suffix == ".json":
            frame.to_json(path, orient="records", indent=2, double_precision=15)
        else:
            raise ValueError("Unsupported file format. Use .json or .csv")
        logger.debug(f"DEBUG - ArtifactLogger: wrote {len(frame)} rows to {path}")
        return path

    @staticmethod
    def load_csv(filename: Union[str, Path]) -> pd.DataFrame:
        return pd.read_csv(filename, comment="#")
