"""명령줄 진입점"""
import sys
from typing import Optional, Sequence

from app.core.app import create_app
from app.core.exceptions import EXIT_CONFIG, handle_exception
from app.core.middleware import setup_logging
from app.core.routing import dispatch


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = create_app()
    args, extras = parser.parse_known_args(argv)
    setup_logging(args.log_level)
    if getattr(args, "command", None) is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return dispatch(args, extras)
    except Exception as e:
        return handle_exception(e)


if __name__ == "__main__":
    sys.exit(main())
