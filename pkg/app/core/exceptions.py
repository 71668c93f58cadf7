"""예외 정의 및 핸들러"""
import logging
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


class FngError(Exception):
    """도구 전체의 기본 예외"""

    exit_code: int = EXIT_NUMERICAL


class ConfigError(FngError, ValueError):
    """설정 오류 (잘못된 키 또는 값의 범위)"""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class EllipticDomainError(FngError, ValueError):
    """타원 함수 인자의 정의역 오류"""


class NoSolutionError(FngError):
    """주어진 (ℓ, q) 에 대해 ν ∈ [0,1) 근이 없음"""

    def __init__(self, message: str, bracket: Sequence[float] = ()):
        super().__init__(message)
        self.bracket = tuple(bracket)


class BranchJumpError(FngError):
    """유한 차분 스텐실이 다른 해 가지로 넘어감"""


class NumericalBlowupError(FngError):
    """전파 중 NaN/Inf 발생"""

    def __init__(self, message: str, step: int = -1, max_abs: float = float("nan")):
        super().__init__(message)
        self.step = step
        self.max_abs = max_abs


class MaxIterationsError(FngError):
    """반복 계산이 수렴하지 않음"""


class GridMismatchError(FngError, ValueError):
    """서로 다른 격자 위의 필드"""


class PeriodMismatchError(FngError):
    """궤적 구간이 주기와 맞지 않음"""


class InsufficientRangeError(FngError):
    """거듭제곱 적합에 필요한 표본 범위 부족"""


class WindowTooShortError(FngError):
    """적합 구간이 진동 주기 수에 비해 짧음"""


class EnsembleError(FngError):
    """앙상블에서 버려진 궤적이 너무 많음"""


class ConsistencyError(FngError):
    """열역학 / 심플렉틱 검증 실패"""


class InconclusiveError(FngError):
    """GS / CES 분류 불확정"""

    exit_code = EXIT_INCONCLUSIVE

    def __init__(self, message: str, candidates: Sequence[str] = ("GS", "CES"), outcome=None):
        super().__init__(message)
        self.candidates = tuple(candidates)
        self.outcome = outcome


class ManifestMismatchError(FngError):
    """매니페스트 체크섬 불일치"""

    exit_code = EXIT_FAILURE

    def __init__(self, message: str, mismatched: Sequence[str] = ()):
        super().__init__(message)
        self.mismatched = list(mismatched)


def handle_exception(exc: BaseException) -> int:
    """예외를 로그로 남기고 종료 코드를 돌려줌"""
    if isinstance(exc, ConfigError):
        key = f" (key={exc.key})" if exc.key else ""
        logger.error(f"Config error{key}: {exc}")
        return exc.exit_code
    if isinstance(exc, InconclusiveError):
        logger.error(f"분류 불확정: {exc} / 후보={list(exc.candidates)}")
        return exc.exit_code
    if isinstance(exc, ManifestMismatchError):
        logger.error(f"체크섬 불일치: {exc.mismatched}")
        return exc.exit_code
    if isinstance(exc, NumericalBlowupError):
        logger.error(f"수치 발산: {exc} (step={exc.step}, max|ψ|={exc.max_abs:.3e})")
        return exc.exit_code
    if isinstance(exc, FngError):
        logger.error(f"수치 계산 실패: {type(exc).__name__}: {exc}")
        return exc.exit_code
    logger.error(f"예상치 못한 오류: {exc}", exc_info=True)
    return EXIT_FAILURE
