from __future__ import annotations
import hashlib
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

FNG1_MAGIC = b"FNG1"
FNG1_HEADER = struct.Struct("<4sIQdd")
FNG1_FIELD = 1
FNG1_SPINOR = 2

def atomic_write_bytes(path: str | Path, data: bytes) -> None:
	"""같은 디렉터리의 임시 파일에 쓴 뒤 os.replace 로 교체합니다."""
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
	try:
		with os.fdopen(fd, "wb") as f:
			f.write(data)
			f.flush()
			os.fsync(f.fileno())
		os.replace(tmp, path)
	except BaseException:
		if os.path.exists(tmp):
			os.remove(tmp)
		raise

def calculate_checksum(contents: bytes) -> str:
	"""sha256 체크섬"""
	return hashlib.sha256(contents).hexdigest()

def file_checksum(path: str | Path) -> str:
	with open(path, "rb") as f:
		return calculate_checksum(f.read())

# ============== FNG1 바이너리 ==============
def _interleave(values: np.ndarray) -> bytes:
	values = np.asarray(values, dtype=np.complex128)
	pairs = np.empty(2 * values.size, dtype="<f8")
	pairs[0::2] = values.real
	pairs[1::2] = values.imag
	return pairs.tobytes()

def encode_field(psi: np.ndarray, L: float, t: float) -> bytes:
	"""헤더 (magic, version=1, N, L, t) + 실수/허수 교차 little-endian f64"""
	psi = np.asarray(psi)
	return FNG1_HEADER.pack(FNG1_MAGIC, FNG1_FIELD, psi.size, float(L), float(t)) + _interleave(psi)

def encode_spinor(u: np.ndarray, v: np.ndarray, L: float, t: float) -> bytes:
	"""version=2: 같은 헤더 뒤에 u, 그 다음 v"""
	u, v = np.asarray(u), np.asarray(v)
	if u.shape != v.shape:
		raise ValueError("u, v 길이가 다릅니다")
	return FNG1_HEADER.pack(FNG1_MAGIC, FNG1_SPINOR, u.size, float(L), float(t)) + _interleave(u) + _interleave(v)

def decode_fng1(data: bytes) -> Tuple[int, float, float, List[np.ndarray]]:
	"""(version, L, t, [성분 배열]) 을 반환합니다."""
	if len(data) < FNG1_HEADER.size:
		raise ValueError("FNG1 헤더가 잘렸습니다.")
	magic, version, n, L, t = FNG1_HEADER.unpack_from(data)
	if magic != FNG1_MAGIC:
		raise ValueError(f"FNG1 파일이 아닙니다: magic={magic!r}")
	if version not in (FNG1_FIELD, FNG1_SPINOR):
		raise ValueError(f"알 수 없는 FNG1 버전입니다: {version}")
	expected = FNG1_HEADER.size + version * 16 * n
	if len(data) != expected:
		raise ValueError(f"FNG1 길이가 맞지 않습니다: {len(data)} != {expected}")
	pairs = np.frombuffer(data, dtype="<f8", offset=FNG1_HEADER.size)
	values = pairs[0::2] + 1j * pairs[1::2]
	return version, L, t, [values[i * n:(i + 1) * n].copy() for i in range(version)]

def read_fng1(path: str | Path) -> Tuple[int, float, float, List[np.ndarray]]:
	with open(path, "rb") as f:
		return decode_fng1(f.read())

# ============== CSV ==============
def _format_cell(value) -> str:
	if isinstance(value, (bool, np.bool_)):
		return str(int(value))
	if isinstance(value, (int, np.integer)):
		return str(int(value))
	if isinstance(value, (float, np.floating)):
		return "%.16e" % float(value)
	return str(value)

def encode_csv(columns: Sequence[str], units: Sequence[str], rows: Sequence[Sequence]) -> bytes:
	"""1행 열 이름, 2행 단위 (둘 다 '#' 접두), 실수는 %.16e"""
	if len(columns) != len(units):
		raise ValueError("열 이름과 단위 개수가 다릅니다.")
	lines = ["# " + ",".join(columns), "# " + ",".join(units)]
	for row in rows:
		if len(row) != len(columns):
			raise ValueError(f"행 길이 {len(row)} 가 열 개수 {len(columns)} 와 다릅니다.")
		lines.append(",".join(_format_cell(v) for v in row))
	return ("\n".join(lines) + "\n").encode("utf-8")

def encode_matrix_csv(labels: Sequence[float], matrix: np.ndarray, unit: str = "1") -> bytes:
	"""정사각 행렬 (행/열 좌표 labels), 첫 열은 좌표"""
	columns = ["x"] + ["%.16e" % x for x in labels]
	units = ["xi"] + [unit] * len(labels)
	rows = [[float(x), *map(float, row)] for x, row in zip(labels, np.asarray(matrix))]
	return encode_csv(columns, units, rows)

def read_csv(path: str | Path) -> Tuple[List[str], List[str], List[List[str]]]:
	"""(열 이름, 단위, 문자열 행)"""
	with open(path, "r", encoding="utf-8") as f:
		lines = [line.rstrip("\n") for line in f if line.strip()]
	if len(lines) < 2 or not lines[0].startswith("#") or not lines[1].startswith("#"):
		raise ValueError(f"CSV 머리 행이 없습니다: {path}")
	columns = [c.strip() for c in lines[0][1:].split(",")]
	units = [u.strip() for u in lines[1][1:].split(",")]
	return columns, units, [line.split(",") for line in lines[2:]]

def read_csv_columns(path: str | Path) -> Dict[str, np.ndarray]:
	"""숫자 열만 float 배열로 읽습니다."""
	columns, _, rows = read_csv(path)
	table: Dict[str, np.ndarray] = {}
	for i, name in enumerate(columns):
		cells = [row[i] for row in rows]
		try:
			table[name] = np.array([float(c) for c in cells])
		except ValueError:
			table[name] = np.array(cells, dtype=object)
	return table
