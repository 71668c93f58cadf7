"""설정 / 결과 스키마"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings


class RingSpec(BaseModel):
    """링 위 cnoidal 해를 지정하는 세기 변수 (n̄, p̄, L, ℓ, q)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    nbar: float = Field(gt=0, description="평균 밀도 N/L")
    pbar: float = Field(description="평균 운동량 밀도 P/L")
    L: float = Field(gt=0, description="링 길이")
    ell: int = Field(ge=1, description="링 안의 주기 수")
    q: int = Field(description="감김수")

    @property
    def N(self) -> float:
        return self.nbar * self.L

    @property
    def P(self) -> float:
        return self.pbar * self.L

    def with_charges(self, N: float, P: float) -> "RingSpec":
        """같은 L, ℓ, q 에서 전하 (N, P) 만 바꾼 사양"""
        return self.model_copy(update={"nbar": N / self.L, "pbar": P / self.L})


class QuenchConfig(BaseModel):
    """델타 장벽 퀜치 실험 설정"""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={"example": {"Z": 1.0, "v": 0.8, "L_min": 400.0, "N": 2048, "dt": 0.01, "t_max": 400.0}},
    )

    Z: float = Field(gt=0, description="장벽 세기 (V = −Zδ)")
    v: float = Field(gt=0, lt=1, description="초기 흐름 속도 (아음속)")
    L_min: float = Field(default=settings.quench_L_min, gt=0, description="최소 상자 길이")
    N: int = Field(default=settings.quench_N, ge=8)
    dt: float = Field(default=settings.quench_dt, gt=0)
    t_max: float = Field(default=settings.quench_t_max, gt=0)
    obs_x: float = settings.quench_obs_x
    transient_cut: float = Field(default=settings.quench_transient_cut, ge=0)
    sample_every: int = Field(default=settings.quench_sample_every, ge=1)
    checkpoint_every: int = Field(default=settings.quench_checkpoint_every, ge=1)
    sponge_width: float = Field(default=settings.sponge_width_frac, ge=0, lt=0.5)
    sponge_strength: float = Field(default=settings.sponge_strength, ge=0)

    @field_validator("N")
    @classmethod
    def _even_grid(cls, value: int) -> int:
        if value % 2:
            raise ValueError("N 은 짝수여야 합니다")
        return value

    @model_validator(mode="after")
    def _check_windows(self) -> "QuenchConfig":
        if self.transient_cut >= self.t_max:
            raise ValueError("transient_cut 은 t_max 보다 작아야 합니다")
        if abs(self.obs_x) >= 0.5 * self.L_min * (1.0 - 2.0 * self.sponge_width):
            raise ValueError("obs_x 가 흡수층 안쪽 관측 영역을 벗어났습니다")
        return self


class EnsembleConfig(BaseModel):
    """Truncated Wigner 앙상블 설정"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    base: QuenchConfig
    n_traj: int = Field(default=settings.tw_n_traj, ge=2)
    seed: int = Field(default=0, ge=0)
    k_cut: Optional[float] = Field(default=None, gt=0, description="모드 차단 (기본 π/2dx)")
    noise_kind: Literal["quantum", "classical_number"] = "quantum"
    classical_sigma: float = Field(default=1e-3, ge=0)
    n0_xi: float = Field(default=settings.tw_n0_xi, gt=0, description="치유 길이당 원자 수")
    output_every: float = Field(default=settings.tw_output_every, gt=0)
    window: float = Field(default=settings.observation_half_width, gt=0)
    subgrid_stride: int = Field(default=settings.tw_subgrid_stride, ge=1)


# ============== 실행 설정 (key=value 파일 + CLI) ==============
class _RunParams(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CnoidalParamsConfig(_RunParams):
    nbar: Optional[float] = Field(default=None, gt=0)
    pbar: Optional[float] = None
    L: Optional[float] = Field(default=None, gt=0)
    ell: int = Field(default=1, ge=1)
    q: int = 0
    J: Optional[float] = Field(default=None, ge=0)
    mu_v: Optional[float] = Field(default=None, gt=0)
    nu: Optional[float] = Field(default=None, ge=0, lt=1)
    N_grid: int = Field(default=256, ge=8)

    @model_validator(mode="after")
    def _one_mode(self) -> "CnoidalParamsConfig":
        forward = [self.nbar, self.pbar, self.L]
        inverse = [self.J, self.mu_v, self.nu]
        if all(x is None for x in forward) and all(x is not None for x in inverse):
            return self
        missing = [name for name, x in zip(("nbar", "pbar", "L"), forward) if x is None]
        if missing:
            raise ValueError(f"required key(s) missing: {', '.join(missing)} (또는 J, mu_v, nu 를 모두 지정)")
        return self


class QuenchParamsConfig(_RunParams):
    Z: float = Field(gt=0)
    v: float = Field(gt=0, lt=1)
    L: float = Field(default=settings.quench_L_min, gt=0)
    N: int = Field(default=settings.quench_N, ge=8)
    dt: float = Field(default=settings.quench_dt, gt=0)
    tmax: float = Field(default=settings.quench_t_max, gt=0)
    obs_x: float = settings.quench_obs_x
    transient_cut: float = Field(default=settings.quench_transient_cut, ge=0)
    adaptive: bool = True

    def to_quench(self) -> QuenchConfig:
        return QuenchConfig(
            Z=self.Z, v=self.v, L_min=self.L, N=self.N, dt=self.dt, t_max=self.tmax,
            obs_x=self.obs_x, transient_cut=self.transient_cut,
        )


class ScanParamsConfig(_RunParams):
    Z: str = Field(description="a:b:n")
    v: str = Field(description="a:b:n")
    L: float = Field(default=settings.quench_L_min, gt=0)
    N: int = Field(default=settings.quench_N, ge=8)
    dt: float = Field(default=settings.quench_dt, gt=0)
    tmax: float = Field(default=settings.quench_t_max, gt=0)
    bisect: bool = True

    @field_validator("Z", "v")
    @classmethod
    def _range(cls, value: str) -> str:
        parse_range(value)
        return value

    @model_validator(mode="after")
    def _velocity_domain(self) -> "ScanParamsConfig":
        vs = parse_range(self.v)
        if min(vs) <= 0 or max(vs) >= 1:
            raise ValueError("v 범위는 (0,1) 안이어야 합니다")
        if min(parse_range(self.Z)) <= 0:
            raise ValueError("Z 범위는 양수여야 합니다")
        return self

    def template(self) -> QuenchConfig:
        first_v = parse_range(self.v)[0]
        first_Z = parse_range(self.Z)[0]
        return QuenchConfig(Z=first_Z, v=first_v, L_min=self.L, N=self.N, dt=self.dt, t_max=self.tmax)


class BdgParamsConfig(CnoidalParamsConfig):
    n_eigs: int = Field(default=64, ge=1)
    h_rel: float = Field(default=settings.thermo_step_rel, gt=0)


class TwParamsConfig(_RunParams):
    Z: float = Field(gt=0)
    v: float = Field(gt=0, lt=1)
    ntraj: int = Field(default=settings.tw_n_traj, ge=2)
    noise: Literal["quantum", "number"] = "quantum"
    sigma: float = Field(default=1e-3, ge=0)
    n0_xi: float = Field(default=settings.tw_n0_xi, gt=0)
    L: float = Field(default=settings.quench_L_min, gt=0)
    N: int = Field(default=settings.quench_N, ge=8)
    dt: float = Field(default=settings.quench_dt, gt=0)
    tmax: float = Field(default=settings.quench_t_max, gt=0)
    k_cut: Optional[float] = Field(default=None, gt=0)

    def to_ensemble(self, seed: int) -> EnsembleConfig:
        base = QuenchConfig(Z=self.Z, v=self.v, L_min=self.L, N=self.N, dt=self.dt, t_max=self.tmax)
        return EnsembleConfig(
            base=base, n_traj=self.ntraj, seed=seed, k_cut=self.k_cut,
            noise_kind="quantum" if self.noise == "quantum" else "classical_number",
            classical_sigma=self.sigma, n0_xi=self.n0_xi,
        )


class FitParamsConfig(_RunParams):
    axis: Literal["v", "Z"]
    fixed: float = Field(gt=0)
    lo: Optional[float] = Field(default=None, gt=0)
    hi: Optional[float] = Field(default=None, gt=0)
    n_samples: int = Field(default=8, ge=2)
    delta_min: float = Field(default=3e-3, gt=0)
    delta_max: float = Field(default=6e-2, gt=0)
    L: float = Field(default=settings.quench_L_min, gt=0)
    N: int = Field(default=settings.quench_N, ge=8)
    dt: float = Field(default=settings.quench_dt, gt=0)
    tmax: float = Field(default=settings.quench_t_max, gt=0)


ExperimentParams = Union[
    CnoidalParamsConfig, QuenchParamsConfig, ScanParamsConfig, BdgParamsConfig, TwParamsConfig, FitParamsConfig
]

PARAMS_BY_EXPERIMENT: Dict[str, type] = {
    "cnoidal": CnoidalParamsConfig,
    "quench": QuenchParamsConfig,
    "scan": ScanParamsConfig,
    "bdg": BdgParamsConfig,
    "tw": TwParamsConfig,
    "fit": FitParamsConfig,
}


class RunConfig(BaseModel):
    """실험 한 번의 실행 설정"""

    model_config = ConfigDict(frozen=True)

    experiment: Literal["cnoidal", "quench", "scan", "bdg", "tw", "fit"]
    params: ExperimentParams
    out_dir: Path = Path("out")
    seed: int = Field(default=0, ge=0)

    def echo(self) -> Dict[str, Any]:
        """매니페스트에 기록할 평탄화된 설정"""
        flat: Dict[str, Any] = {"experiment": self.experiment, "out": str(self.out_dir), "seed": self.seed}
        flat.update(self.params.model_dump(exclude_none=True))
        return flat


class ProducedFile(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """실행 결과 매니페스트"""

    config: Dict[str, Any]
    code_version: str
    started_at: str
    finished_at: str
    files: List[ProducedFile] = []

    class Config:
        json_schema_extra = {
            "example": {
                "config": {"experiment": "quench", "Z": 1.0, "v": 0.8},
                "code_version": "1.0.0",
                "started_at": "2026-01-01T00:00:00+00:00",
                "finished_at": "2026-01-01T00:05:00+00:00",
                "files": [{"path": "timeseries.csv", "sha256": "…", "bytes": 1024}],
            }
        }


def parse_range(text: str) -> List[float]:
    """'a:b:n' → n 개의 등간격 값"""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"범위 형식은 a:b:n 이어야 합니다: {text!r}")
    start, stop = float(parts[0]), float(parts[1])
    count = int(parts[2])
    if count < 1 or not (math.isfinite(start) and math.isfinite(stop)):
        raise ValueError(f"잘못된 범위: {text!r}")
    if count == 1:
        return [start]
    step = (stop - start) / (count - 1)
    return [start + i * step for i in range(count)]
