"""애플리케이션 설정"""
import os
from typing import List


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)


class Settings:
    """애플리케이션 설정 (허용 오차는 모두 여기서 관리)"""

    # 로깅 설정
    log_level: str = os.getenv("FNG_LOG_LEVEL", "INFO")

    # 워커 설정 (FNG_THREADS 로 상한 지정)
    max_workers: int = _env_int("FNG_THREADS", os.cpu_count() or 1)

    # 타원 함수
    elliptic_nu_eps: float = 1e-15

    # 링 위 cnoidal 해 탐색
    ring_scan_points: int = 400
    ring_scan_decades: int = 12
    ring_root_xtol: float = 1e-15
    ring_residual_tol: float = 1e-10
    branch_jump_tol: float = 1e-2
    thermo_step_rel: float = 1e-4
    thermo_tol: float = 1e-4

    # 스펙트럴 전파
    blowup_check_every: int = 200
    imaginary_time_max_iter: int = 200000
    imaginary_time_check_every: int = 50
    imaginary_time_min_dtau: float = 1e-5

    # BdG 모드
    stationary_residual_tol: float = 1e-8
    symplectic_tol: float = 2e-3
    zero_mode_tol: float = 1e-6
    instability_tol: float = 1e-7
    dense_eig_max_points: int = 1024

    # 퀜치 기본값 (치유 길이, ξ/c 단위)
    quench_L_min: float = 400.0
    quench_N: int = 2048
    quench_dt: float = 0.01
    quench_t_max: float = 400.0
    quench_transient_cut: float = 150.0
    quench_obs_x: float = -20.0
    quench_sample_every: int = 10
    quench_checkpoint_every: int = 100
    sponge_width_frac: float = 0.05
    sponge_strength: float = 1.0
    observation_half_width: float = 50.0

    # GS / CES 분류
    ces_threshold: float = 1e-3
    ces_guard_band: List[float] = [5e-4, 2e-3]
    ces_peak_ratio: float = 10.0
    ces_min_periods: int = 5
    ces_max_doublings: int = 2
    boundary_resolution: float = 1e-3
    period_mismatch_tol: float = 1e-2
    energy_drift_tol: float = 1e-6

    # 임계 지수 적합
    exponent_min_samples: int = 6
    exponent_min_decades: float = 1.0

    # Truncated Wigner
    tw_n_traj: int = 400
    tw_n0_xi: float = 100.0
    tw_output_every: float = 0.5
    tw_subgrid_stride: int = 4
    tw_max_drop_frac: float = 0.01
    fng_min_periods: int = 3


settings = Settings()
