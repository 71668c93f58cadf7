"""로깅 설정"""
import logging
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """루트 로거 설정 (level 이 없으면 settings.log_level)"""
    logging.basicConfig(level=(level or settings.log_level).upper(), format=LOG_FORMAT, force=True)
