import logging
import os
from typing import Optional

from dotenv import load_dotenv

# Load .env file
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Config:
    # Every command writes below this directory unless --out is given
    OUTPUT_DIR = os.getenv("ASMR_OUTPUT_DIR", "runs")
    LOG_LEVEL = os.getenv("ASMR_LOG_LEVEL", "INFO").upper()
    LOG_FILE = os.getenv("ASMR_LOG_FILE", "asmr.log")


config = Config()


def configure_logging(output_dir: Optional[str] = None, level: Optional[str] = None):
    """File + console logging; the log file lives in the run's output directory."""
    level_name = (level or config.LOG_LEVEL).upper()
    handlers = [logging.StreamHandler()]
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        handlers.insert(0, logging.FileHandler(os.path.join(output_dir, config.LOG_FILE), encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
