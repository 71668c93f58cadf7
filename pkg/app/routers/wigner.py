"""Truncated Wigner 라우터"""
import argparse
import logging

import numpy as np

from app.core.config import settings
from app.core.exceptions import InconclusiveError, WindowTooShortError
from app.core.routing import CommandRouter, workers_option
from app.models.schemas import RunConfig, TwParamsConfig
from app.services.ces_service import run_quench
from app.services.run_io_service import OutputWriter
from app.services.wigner_service import (
    background_density,
    fit_envelope,
    fit_fng,
    rank_one_dominance,
    run_ensemble,
    split_half_error,
)

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["Truncated Wigner"])


@router.command(
    "tw",
    summary="Truncated Wigner 밀도 상관",
    description="""
    Bogoliubov 진공 잡음 (또는 고전적 수 잡음) 을 더한 궤적 앙상블로 n(x,t) 와 G(x,x′,t) 를 구합니다.

    - density.csv: 부분격자 위 평균 밀도 (대칭 순서 보정 포함)
    - G_final.csv: 마지막 출력 시각의 G(x,x′)
    - G_antidiagonal.csv: G(x,−x,t)
    - dominance.csv: 시각별 σ₁/σ₂ 와 반쪽 앙상블 오차
    - envelope.csv, fng_fit.csv (평균장이 CES 일 때): 진동 포락선과 계수-1 적합

    평균장 분류가 불확정이면 상관 출력과 매니페스트를 기록한 뒤 종료 코드 4 로 끝납니다.
    """,
    experiment="tw",
    options=[workers_option()],
)
def tw_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg: TwParamsConfig = config.params
    ensemble = cfg.to_ensemble(config.seed)
    workers = max(1, min(args.workers, settings.max_workers))
    writer = OutputWriter(config)

    stats = run_ensemble(ensemble, workers=workers)
    t_grid, x_grid = np.meshgrid(stats.times, stats.x, indexing="ij")
    writer.write_table(
        "density.csv",
        {"t": t_grid.ravel(), "x": x_grid.ravel(), "n": stats.mean_density.ravel()},
        {"t": "xi/c", "x": "xi", "n": "n0"},
    )
    writer.write_matrix("G_final.csv", stats.x, stats.G[-1], unit="n0/xi")
    x_pos, trace = stats.trace_antidiagonal()
    t_grid, x_grid = np.meshgrid(stats.times, x_pos, indexing="ij")
    writer.write_table(
        "G_antidiagonal.csv",
        {"t": t_grid.ravel(), "x": x_grid.ravel(), "G": trace.ravel()},
        {"t": "xi/c", "x": "xi", "G": "n0/xi"},
    )
    writer.write_table(
        "dominance.csv",
        {"t": stats.times, "sigma_ratio": rank_one_dominance(stats), "split_half_error": split_half_error(stats)},
        {"t": "xi/c", "sigma_ratio": "1", "split_half_error": "n0/xi"},
    )

    try:
        mean_field = run_quench(ensemble.base, refine=False)
    except InconclusiveError:
        writer.finish()
        raise
    if mean_field.kind == "CES":
        column = int(np.argmin(np.abs(x_pos - abs(ensemble.base.obs_x))))
        try:
            envelope = fit_envelope(stats.times, trace[:, column], mean_field.period)
            _, _, rate = background_density(ensemble)
            fng = fit_fng(stats, rate, mean_field.period)
        except WindowTooShortError as e:
            logger.warning(f"포락선 적합 생략: {e}")
        else:
            writer.write_table(
                "envelope.csv",
                {"t": envelope.times, "G_max": envelope.maxima},
                {"t": "xi/c", "G_max": "n0/xi"},
            )
            writer.write_csv(
                "fng_fit.csv",
                ["x", "period", "envelope_a", "envelope_b", "envelope_c", "envelope_r_squared",
                 "rank_one_a", "rank_one_b", "rank_one_c", "rank_one_r_squared", "rank_one_residual"],
                ["xi", "xi/c", "n0/xi", "n0/xi", "n0/xi", "1", "1", "1", "1", "1", "1"],
                [[float(x_pos[column]), mean_field.period, envelope.a, envelope.b, envelope.c, envelope.r_squared,
                  *fng.coefficients, fng.envelope.r_squared, fng.rank_one_residual]],
            )
    else:
        logger.warning(f"평균장 궤적이 {mean_field.kind} 이므로 FNG 적합을 생략합니다")
    writer.finish()
    logger.info(f"tw 완료: 궤적 {stats.n_used}개 (제외 {stats.n_dropped})")
    return 0
