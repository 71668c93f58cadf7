"""CES 퀜치 / 상도 / 임계 지수 라우터"""
import argparse
import logging

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigError, InconclusiveError
from app.core.routing import CommandRouter, workers_option
from app.models.schemas import FitParamsConfig, QuenchConfig, RunConfig, ScanParamsConfig, parse_range
from app.services.ces_service import (
    QuenchOutcome,
    aligned_time,
    critical_samples,
    default_deltas,
    fit_critical_exponent,
    floquet_charge,
    locate_boundary,
    run_quench,
    scan_phase_diagram,
)
from app.services.modes_service import fng_monodromy
from app.services.run_io_service import OutputWriter, cell_name, load_completed_cells, write_cell

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["CES"])


def _workers(args: argparse.Namespace) -> int:
    return max(1, min(args.workers, settings.max_workers))


def _write_quench(writer: OutputWriter, outcome: QuenchOutcome) -> None:
    writer.write_table(
        "timeseries.csv",
        {"t": outcome.times, "n_obs": outcome.density, "phase_obs": outcome.obs_phase},
        {"t": "xi/c", "n_obs": "n0", "phase_obs": "rad"},
    )
    writer.write_csv(
        "summary.csv",
        ["Z", "v", "kind", "omega", "period", "amplitude", "peak_ratio", "t_max", "mu"],
        ["1", "c", "-", "c/xi", "xi/c", "1", "1", "xi/c", "mu0"],
        [[outcome.config.Z, outcome.config.v, outcome.kind, outcome.omega, outcome.period,
          outcome.amplitude, outcome.peak_ratio, outcome.t_max, outcome.mu]],
    )
    final = outcome.trajectory.last_state
    writer.write_field("final.fng1", final.psi, final.grid.L, final.t)
    writer.write_table(
        "final_profile.csv",
        {"x": final.grid.x, "n": np.abs(final.psi) ** 2, "arg": np.angle(final.psi)},
        {"x": "xi", "n": "n0", "arg": "rad"},
    )


@router.command(
    "quench",
    summary="델타 장벽 퀜치와 GS/CES 분류",
    description="""
    흐르는 응축체 e^{ivx} 에 인력 장벽 −Zδ(x) 를 켜고 x=obs_x 의 밀도로 GS/CES 를 분류합니다.

    - timeseries.csv: 관측점 밀도와 위상
    - summary.csv: 분류, ω, T, 진폭, μ
    - final.fng1, final_profile.csv: 마지막 필드와 그 x, |ψ|², arg ψ
    - floquet.csv (CES): Floquet 전하 F, 엔탈피 I, 한 주기 FNG 모노드로미 오차

    분류가 불확정이면 결과를 기록한 뒤 종료 코드 4 로 끝납니다.
    """,
    experiment="quench",
)
def quench_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg = config.params.to_quench()
    writer = OutputWriter(config)
    try:
        outcome = run_quench(cfg, adaptive=config.params.adaptive)
    except InconclusiveError as e:
        _write_quench(writer, e.outcome)
        writer.finish()
        raise

    _write_quench(writer, outcome)
    if outcome.kind == "CES":
        trajectory = outcome.trajectory
        t0 = aligned_time(trajectory, trajectory.t_end - 2.0 * outcome.period)
        charge = floquet_charge(trajectory, outcome.omega, outcome.mu, t0)
        window = trajectory.grid.window_mask(settings.observation_half_width)
        err_theta, err_t = fng_monodromy(trajectory, outcome.period, outcome.mu, t0, window)
        writer.write_csv(
            "floquet.csv",
            ["t0", "F", "I", "E", "N", "energy_drift", "monodromy_theta", "monodromy_t"],
            ["xi/c", "n0*xi", "n0*mu0*xi", "n0*mu0*xi", "n0*xi", "1", "1", "1"],
            [[t0, charge.F, charge.I, charge.E, charge.N, charge.energy_drift, err_theta, err_t]],
        )
    writer.finish()
    return 0


@router.command(
    "scan",
    summary="(Z, v) 상도",
    description="""
    Z, v 범위 (a:b:n) 의 모든 칸을 퀜치로 분류하고 행/열마다 GS→CES 경계를 이분법으로 찾습니다.

    완료된 칸은 cells/<Z>_<v>.csv 로 남고, 같은 출력 디렉터리로 다시 실행하면 건너뜁니다 (--force 로 재계산).
    """,
    experiment="scan",
    options=[
        (("--force",), {"action": "store_true", "help": "완료된 칸도 다시 계산"}),
        workers_option(),
    ],
)
def scan_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg: ScanParamsConfig = config.params
    Z_values, v_values = parse_range(cfg.Z), parse_range(cfg.v)
    writer = OutputWriter(config)

    done = {} if args.force else load_completed_cells(writer.out_dir)
    done = {key: cell for key, cell in done.items() if key[0] in Z_values and key[1] in v_values}
    for cell in done.values():
        writer.adopt(cell_name(cell.Z, cell.v))

    diagram = scan_phase_diagram(
        Z_values, v_values, cfg.template(),
        done=done,
        on_cell=lambda cell: write_cell(writer, cell),
        bisect=cfg.bisect,
        workers=_workers(args),
    )
    writer.write_csv(
        "phase_diagram.csv", ["Z", "v", "kind", "omega", "amplitude"], ["1", "c", "-", "c/xi", "1"],
        [[row["Z"], row["v"], row["kind"], row["omega"], row["amplitude"]] for row in diagram.rows()],
    )
    boundary_rows = [["v", Z, vc] for Z, vc in sorted(diagram.v_boundary.items())]
    boundary_rows += [["Z", v, Zc] for v, Zc in sorted(diagram.Z_boundary.items())]
    writer.write_csv("boundary.csv", ["axis", "fixed", "critical"], ["-", "1", "1"], boundary_rows)
    writer.finish()

    if diagram.inconclusive:
        logger.warning(f"불확정 칸: {diagram.inconclusive}")
    return 0


def _fit_template(cfg: FitParamsConfig) -> QuenchConfig:
    Z, v = (cfg.fixed, cfg.lo) if cfg.axis == "v" else (cfg.lo, cfg.fixed)
    return QuenchConfig(Z=Z, v=v, L_min=cfg.L, N=cfg.N, dt=cfg.dt, t_max=cfg.tmax)


@router.command(
    "fit-exponent",
    summary="임계 지수 적합",
    description="""
    [lo, hi] 안의 경계를 이분법으로 찾고, CES 쪽 거리 δ 에서 ω 를 측정해 ω ∝ δ^β 를 적합합니다.

    axis=v 는 Z=fixed 에서 v 를, axis=Z 는 v=fixed 에서 Z 를 바꿉니다.
    """,
    experiment="fit",
    options=[workers_option()],
)
def fit_exponent_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg: FitParamsConfig = config.params
    for key in ("lo", "hi"):
        if getattr(cfg, key) is None:
            raise ConfigError(f"필수 키 '{key}' 가 없습니다 (경계를 감싸는 구간)", key=key)
    if cfg.delta_max <= cfg.delta_min:
        raise ConfigError("delta_max 는 delta_min 보다 커야 합니다", key="delta_max")
    template = _fit_template(cfg)
    writer = OutputWriter(config)

    critical = locate_boundary(cfg.axis, cfg.fixed, cfg.lo, cfg.hi, template)
    deltas = default_deltas(cfg.delta_min, cfg.delta_max, cfg.n_samples)
    samples = critical_samples(cfg.axis, cfg.fixed, critical, deltas, template, workers=_workers(args))
    writer.write_csv(
        "samples.csv", ["delta", "omega"], ["1", "c/xi"], [[delta, omega] for delta, omega in samples]
    )
    fit = fit_critical_exponent(samples)
    writer.write_csv(
        "exponent.csv",
        ["axis", "fixed", "critical", "exponent", "prefactor", "stderr", "r_squared", "n_samples", "decades"],
        ["-", "1", "1", "1", "c/xi", "1", "1", "1", "1"],
        [[cfg.axis, cfg.fixed, critical, fit.exponent, fit.prefactor, fit.stderr, fit.r_squared,
          fit.n_samples, fit.decades]],
    )
    writer.finish()
    return 0
