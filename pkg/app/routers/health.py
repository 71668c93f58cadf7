"""출력 검증 라우터"""
import argparse

from app.core.routing import CommandRouter
from app.services.run_io_service import verify_manifest

router = CommandRouter(tags=["Verify"])


@router.command(
    "verify",
    summary="매니페스트 체크섬 검증",
    description="출력 디렉터리의 manifest.json 에 기록된 모든 파일의 sha256 을 다시 계산합니다. 불일치면 종료 코드 1.",
    options=[(("out",), {"help": "출력 디렉터리"})],
)
def verify_command(args: argparse.Namespace) -> int:
    manifest = verify_manifest(args.out)
    print(f"OK: {len(manifest.files)} files")
    return 0
