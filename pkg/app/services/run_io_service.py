"""실행 설정 파싱, 산출물 기록, 매니페스트 검증"""
from __future__ import annotations

import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.core.exceptions import ConfigError, ManifestMismatchError
from app.models.schemas import PARAMS_BY_EXPERIMENT, ProducedFile, RunConfig, RunManifest
from app.services.ces_service import CellResult
from app.utils.utils import (
    atomic_write_bytes,
    encode_csv,
    encode_field,
    encode_matrix_csv,
    encode_spinor,
    file_checksum,
    calculate_checksum,
    read_csv,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CELLS_DIR = "cells"
_RUN_KEYS = {"experiment", "out", "seed"}

CELL_COLUMNS = ["Z", "v", "kind", "omega", "amplitude"]
CELL_UNITS = ["1", "c", "-", "1/t", "1"]


# ============== 설정 파싱 ==============
def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """평탄한 key = value 텍스트 ('#' 이후 주석)"""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: 'key = value' 형식이 아닙니다: {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: 키가 비어 있습니다")
        if key in values:
            raise ConfigError(f"{source}:{number}: 키가 중복되었습니다: {key}", key=key)
        values[key] = value
    return values


def parse_overrides(args: Sequence[str]) -> Dict[str, str]:
    """CLI 의 --key=value, --key value, --flag (true) 를 키-값으로"""
    overrides: Dict[str, str] = {}
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith("--") or len(token) <= 2:
            raise ConfigError(f"알 수 없는 인자입니다: {token!r}")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        elif i + 1 < len(args) and not args[i + 1].startswith("--"):
            key, value = body, args[i + 1]
            i += 1
        else:
            key, value = body, "true"
        overrides[key.replace("-", "_")] = value
        i += 1
    return overrides


def _config_error(exc: ValidationError, experiment: str) -> ConfigError:
    accepted = sorted(PARAMS_BY_EXPERIMENT[experiment].model_fields) + sorted(_RUN_KEYS)
    error = exc.errors()[0]
    key = str(error["loc"][0]) if error.get("loc") else None
    if error["type"] == "extra_forbidden":
        message = f"알 수 없는 키 '{key}' ({experiment}): 허용 키 = {', '.join(accepted)}"
    elif error["type"] == "missing":
        message = f"필수 키 '{key}' 가 없습니다 ({experiment})"
    elif key is not None:
        message = f"키 '{key}' 값이 잘못되었습니다: {error['msg']} (입력={error.get('input')!r})"
    else:
        message = f"{experiment} 설정이 잘못되었습니다: {error['msg']}"
    return ConfigError(message, key=key)


def build_run_config(experiment: str, values: Mapping[str, Any]) -> RunConfig:
    """병합된 키-값에서 RunConfig 생성 (알 수 없는 키는 ConfigError)"""
    if experiment not in PARAMS_BY_EXPERIMENT:
        raise ConfigError(
            f"알 수 없는 실험 '{experiment}': 허용 = {', '.join(sorted(PARAMS_BY_EXPERIMENT))}", key="experiment"
        )
    values = dict(values)
    declared = values.pop("experiment", experiment)
    if declared != experiment:
        raise ConfigError(f"설정 파일의 experiment={declared} 가 명령 {experiment} 와 다릅니다", key="experiment")
    run_fields: Dict[str, Any] = {}
    if "out" in values:
        run_fields["out_dir"] = values.pop("out")
    if "seed" in values:
        run_fields["seed"] = values.pop("seed")
    try:
        params = PARAMS_BY_EXPERIMENT[experiment].model_validate(values)
    except ValidationError as e:
        raise _config_error(e, experiment) from e
    try:
        return RunConfig(experiment=experiment, params=params, **run_fields)
    except ValidationError as e:
        error = e.errors()[0]
        key = {"out_dir": "out"}.get(str(error["loc"][0]), str(error["loc"][0]))
        raise ConfigError(f"키 '{key}' 값이 잘못되었습니다: {error['msg']}", key=key) from e


def parse_config(
    experiment: str,
    path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """우선순위: CLI > 설정 파일 > 기본값"""
    merged: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"설정 파일이 없습니다: {path}", key="config")
        merged.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config = build_run_config(experiment, merged)
    logger.info(f"설정: {experiment} {config.echo()}")
    return config


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """정규화된 key = value (정렬된 키, 왕복 가능한 실수)"""
    echo = config.echo()
    return "".join(f"{key} = {_format_value(echo[key])}\n" for key in sorted(echo))


def load_run_config(text: str) -> RunConfig:
    """serialize_config 출력을 다시 RunConfig 로"""
    values = parse_config_text(text)
    if "experiment" not in values:
        raise ConfigError("experiment 키가 없습니다", key="experiment")
    return build_run_config(values["experiment"], values)


# ============== 산출물 ==============
def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class OutputWriter:
    """
    한 출력 디렉터리의 단일 기록자

    모든 파일은 임시 파일 + rename 으로 기록되고 체크섬이 모인다.
    finish() 가 마지막에 매니페스트를 쓴다.
    """

    def __init__(self, config: RunConfig, out_dir: Optional[str | Path] = None):
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.started_at = _now()
        self._files: Dict[str, ProducedFile] = {}

    def _record(self, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        atomic_write_bytes(path, data)
        self._files[name] = ProducedFile(path=name, sha256=calculate_checksum(data), bytes=len(data))
        logger.debug(f"기록: {path} ({len(data)} bytes)")
        return path

    def write_csv(self, name: str, columns: Sequence[str], units: Sequence[str], rows: Sequence[Sequence]) -> Path:
        return self._record(name, encode_csv(columns, units, rows))

    def write_table(self, name: str, table: Mapping[str, np.ndarray], units: Mapping[str, str]) -> Path:
        """같은 길이 열 배열들의 CSV"""
        columns = list(table)
        rows = list(zip(*(np.asarray(table[c]).tolist() for c in columns)))
        return self.write_csv(name, columns, [units.get(c, "1") for c in columns], rows)

    def write_matrix(self, name: str, labels: Sequence[float], matrix: np.ndarray, unit: str = "1") -> Path:
        return self._record(name, encode_matrix_csv(labels, matrix, unit))

    def write_field(self, name: str, psi: np.ndarray, L: float, t: float) -> Path:
        return self._record(name, encode_field(psi, L, t))

    def write_spinor(self, name: str, u: np.ndarray, v: np.ndarray, L: float, t: float) -> Path:
        return self._record(name, encode_spinor(u, v, L, t))

    def adopt(self, name: str) -> None:
        """이전 실행에서 이미 기록된 파일을 매니페스트에 포함"""
        path = self.out_dir / name
        self._files[name] = ProducedFile(path=name, sha256=file_checksum(path), bytes=path.stat().st_size)

    @property
    def files(self) -> List[ProducedFile]:
        return [self._files[name] for name in sorted(self._files)]

    def finish(self) -> RunManifest:
        manifest = RunManifest(
            config=self.config.echo(),
            code_version=__version__,
            started_at=self.started_at,
            finished_at=_now(),
            files=self.files,
        )
        data = json.dumps(manifest.model_dump(), indent=2, sort_keys=True, default=str) + "\n"
        atomic_write_bytes(self.out_dir / MANIFEST_NAME, data.encode("utf-8"))
        logger.info(f"매니페스트 기록: {self.out_dir / MANIFEST_NAME} (파일 {len(manifest.files)}개)")
        return manifest


def write_outputs(
    config: RunConfig,
    tables: Mapping[str, Tuple[Mapping[str, np.ndarray], Mapping[str, str]]],
    fields: Optional[Mapping[str, Tuple[np.ndarray, float, float]]] = None,
    out_dir: Optional[str | Path] = None,
) -> RunManifest:
    """표 (CSV) 와 필드 스냅숏 (FNG1) 을 쓰고 매니페스트를 마지막에 기록"""
    writer = OutputWriter(config, out_dir)
    for name, (table, units) in tables.items():
        writer.write_table(name, table, units)
    for name, (psi, L, t) in (fields or {}).items():
        writer.write_field(name, psi, L, t)
    return writer.finish()


def read_manifest(out_dir: str | Path) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ConfigError(f"매니페스트가 없습니다: {path}", key="out")
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))


def verify_manifest(out_dir: str | Path) -> RunManifest:
    """모든 체크섬을 다시 계산 (불일치 또는 누락은 ManifestMismatchError)"""
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    mismatched = []
    for produced in manifest.files:
        path = out_dir / produced.path
        if not path.is_file():
            logger.warning(f"누락된 파일: {produced.path}")
            mismatched.append(produced.path)
        elif file_checksum(path) != produced.sha256:
            logger.warning(f"체크섬 불일치: {produced.path}")
            mismatched.append(produced.path)
    if mismatched:
        raise ManifestMismatchError(f"{len(mismatched)}/{len(manifest.files)} 파일 불일치", mismatched)
    logger.info(f"검증 완료: {out_dir} (파일 {len(manifest.files)}개)")
    return manifest


# ============== 상도 칸 재개 ==============
def cell_name(Z: float, v: float) -> str:
    return f"{CELLS_DIR}/{Z:.10g}_{v:.10g}.csv"


def write_cell(writer: OutputWriter, cell: CellResult) -> Path:
    return writer.write_csv(cell_name(cell.Z, cell.v), CELL_COLUMNS, CELL_UNITS, [[cell.Z, cell.v, cell.kind, cell.omega, cell.amplitude]])


def _parse_cell(path: Path) -> CellResult:
    columns, _, rows = read_csv(path)
    if columns != CELL_COLUMNS or len(rows) != 1:
        raise ValueError(f"칸 파일 형식이 아닙니다: {path}")
    Z, v, kind, omega, amplitude = rows[0]
    return CellResult(float(Z), float(v), kind, float(omega), float(amplitude))


def load_completed_cells(out_dir: str | Path) -> Dict[Tuple[float, float], CellResult]:
    """
    이전 실행에서 끝난 칸

    매니페스트가 있으면 체크섬이 맞는 칸만 인정한다. 칸 파일은 원자적으로
    기록되므로 매니페스트 없이 중단된 실행의 칸도 그대로 쓴다.
    """
    out_dir = Path(out_dir)
    cells_dir = out_dir / CELLS_DIR
    if not cells_dir.is_dir():
        return {}
    known: Optional[Dict[str, str]] = None
    if (out_dir / MANIFEST_NAME).is_file():
        known = {f.path: f.sha256 for f in read_manifest(out_dir).files}
    done: Dict[Tuple[float, float], CellResult] = {}
    for path in sorted(cells_dir.glob("*.csv")):
        name = f"{CELLS_DIR}/{path.name}"
        if known is not None and name in known and known[name] != file_checksum(path):
            logger.warning(f"체크섬이 맞지 않아 다시 계산합니다: {name}")
            continue
        try:
            cell = _parse_cell(path)
        except (ValueError, IndexError) as e:
            logger.warning(f"칸 파일을 읽지 못해 다시 계산합니다: {name} ({e})")
            continue
        if any(math.isnan(x) for x in (cell.Z, cell.v)):
            continue
        done[(cell.Z, cell.v)] = cell
    logger.info(f"완료된 칸 {len(done)}개를 불러왔습니다: {cells_dir}")
    return done
