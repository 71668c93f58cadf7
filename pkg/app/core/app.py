"""명령줄 앱 생성 및 설정"""
import argparse

from app import __version__
from app.core.config import settings
from app.core.routing import CommandRouter
from app.routers import ces, cnoidal, health, wigner


def _include_router(subparsers, router: CommandRouter) -> None:
    for command in router.commands:
        parser = subparsers.add_parser(
            command.name,
            help=command.summary,
            description=command.description,
            allow_abbrev=False,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        command.configure(parser)


def create_app() -> argparse.ArgumentParser:
    """명령줄 파서 생성 및 라우터 등록"""
    parser = argparse.ArgumentParser(
        prog="fng",
        description="""
        1차원 BEC 의 자발적 대칭 깨짐 도구 모음

        주요 기능:
          cnoidal       링 위 cnoidal 해와 열역학 미분
          bdg           Bogoliubov 스펙트럼과 Goldstone-Gibbs 모드
          quench        델타 장벽 퀜치와 GS/CES 분류
          scan          (Z, v) 상도와 경계 이분법
          fit-exponent  임계 지수 적합
          tw            Truncated Wigner 상관 함수
          verify        매니페스트 체크섬 검증

        실험 인자는 --config 파일 또는 --key=value 로 지정합니다 (CLI > 파일 > 기본값).
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.log_level, help="로그 레벨")

    subparsers = parser.add_subparsers(title="commands", metavar="COMMAND")

    # 라우터 등록
    _include_router(subparsers, health.router)
    _include_router(subparsers, cnoidal.router)
    _include_router(subparsers, ces.router)
    _include_router(subparsers, wigner.router)

    return parser
