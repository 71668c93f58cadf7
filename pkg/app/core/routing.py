"""서브커맨드 라우터"""
import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app.core.config import settings
from app.core.exceptions import ConfigError
from app.models.schemas import RunConfig
from app.services.run_io_service import parse_config, parse_overrides


@dataclass
class CommandOption:
    flags: Tuple[str, ...]
    kwargs: Dict[str, Any]


@dataclass
class Command:
    name: str
    handler: Callable[..., int]
    summary: str
    description: str
    experiment: Optional[str] = None
    options: List[CommandOption] = field(default_factory=list)

    def configure(self, parser: argparse.ArgumentParser) -> None:
        if self.experiment is not None:
            parser.add_argument("--config", default=None, help="key = value 설정 파일")
            parser.add_argument("--out", default=None, help="출력 디렉터리")
            parser.add_argument("--seed", default=None, help="난수 시드")
        for option in self.options:
            parser.add_argument(*option.flags, **option.kwargs)
        parser.set_defaults(command=self)


class CommandRouter:
    """명령 묶음 (각 명령은 handler 하나와 CLI 옵션)"""

    def __init__(self, tags: Sequence[str] = ()):
        self.tags = list(tags)
        self.commands: List[Command] = []

    def command(
        self,
        name: str,
        summary: str,
        description: str = "",
        experiment: Optional[str] = None,
        options: Sequence[Tuple[Tuple[str, ...], Dict[str, Any]]] = (),
    ) -> Callable[[Callable[..., int]], Callable[..., int]]:
        """
        명령 등록 데코레이터

        experiment 가 있으면 handler(config: RunConfig, args) 로,
        없으면 handler(args) 로 호출된다.
        """

        def decorator(func: Callable[..., int]) -> Callable[..., int]:
            self.commands.append(Command(
                name=name,
                handler=func,
                summary=summary,
                description=description or summary,
                experiment=experiment,
                options=[CommandOption(tuple(flags), dict(kwargs)) for flags, kwargs in options],
            ))
            return func

        return decorator


def config_overrides(args: argparse.Namespace, extras: Sequence[str]) -> Dict[str, Any]:
    """--config 외의 CLI 값 (--out, --seed 와 임의의 --key=value)"""
    overrides: Dict[str, Any] = parse_overrides(extras)
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return overrides


def dispatch(args: argparse.Namespace, extras: Sequence[str]) -> int:
    command: Command = args.command
    if command.experiment is None:
        if extras:
            raise ConfigError(f"{command.name}: 알 수 없는 인자 {list(extras)}")
        return command.handler(args)

    config: RunConfig = parse_config(command.experiment, args.config, config_overrides(args, extras))
    return command.handler(config, args)


def workers_option() -> Tuple[Tuple[str, ...], Dict[str, Any]]:
    return ("--workers",), {"type": int, "default": settings.max_workers, "help": "프로세스 수 (기본 FNG_THREADS)"}
