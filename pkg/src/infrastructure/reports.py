import logging
import os
from typing import List, Optional

import pandas as pd

from src.infrastructure.event_bus import Event, EventBus, EventType

logger = logging.getLogger("Reports")

FLOAT_FORMAT = "%.10g"


def write_csv(frame: pd.DataFrame, path: str, config_hash: str) -> str:
    """CSV with a leading `# config_hash=` provenance line, then the header row."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# config_hash={config_hash}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_config_hash(path: str) -> Optional[str]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    prefix = "# config_hash="
    return first[len(prefix):] if first.startswith(prefix) else None


class MetricsRecorder:
    """Collects the per-epoch metric rows published on EPOCH_COMPLETED."""

    def __init__(self, bus: EventBus, stage: str = "train"):
        self.stage = stage
        self.rows: List[dict] = []
        bus.subscribe(EventType.EPOCH_COMPLETED, self.on_epoch_completed)

    def on_epoch_completed(self, event: Event):
        if event.data.get("stage") == self.stage:
            self.rows.append(dict(event.data.get("metrics", {})))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)
