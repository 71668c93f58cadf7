"""cnoidal 해 / BdG 라우터"""
import argparse
import logging
from typing import List, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConsistencyError
from app.core.routing import CommandRouter
from app.models.schemas import CnoidalParamsConfig, RingSpec, RunConfig
from app.services.cnoidal_service import (
    CnoidalParams,
    charges,
    default_steps,
    gibbs_duhem_check,
    matching_residuals,
    params_from_roots,
    ring_spec,
    roots_from_invariants,
    solve_ring_branches,
    thermo_derivatives,
)
from app.services.modes_service import (
    MODE_LABELS,
    berry_gibbs_curvature,
    bogoliubov_spectrum,
    cnoidal_background,
    gibbs_source_check,
    goldstone_gibbs_modes,
    hybrid_goldstone_gibbs_modes,
    near_zero_subspace,
)
from app.services.run_io_service import OutputWriter
from app.services.spectral_service import gpg_residual

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["cnoidal"])

SOLUTION_COLUMNS = ["nbar", "pbar", "L", "ell", "q", "nu", "n1", "n2", "n3", "mu", "v", "E", "gpg_residual"]
SOLUTION_UNITS = ["n0", "n0*c", "xi", "1", "1", "1", "n0", "n0", "n0", "mu0", "c", "n0*mu0*xi", "1"]


def resolve_solutions(cfg: CnoidalParamsConfig) -> Tuple[RingSpec, List[CnoidalParams]]:
    """(n̄, p̄, L, ℓ, q) 이면 모든 가지, (J, μ_v, ν) 이면 그 해 하나"""
    if cfg.nbar is not None:
        spec = RingSpec(nbar=cfg.nbar, pbar=cfg.pbar, L=cfg.L, ell=cfg.ell, q=cfg.q)
        return spec, solve_ring_branches(spec)
    n1, n2, n3 = roots_from_invariants(cfg.J, cfg.mu_v, cfg.nu)
    params = params_from_roots(n1, n2, n3, cfg.ell, cfg.q)
    return ring_spec(params), [params]


def _solution_row(spec: RingSpec, params: CnoidalParams, N_grid: int) -> list:
    background = cnoidal_background(params, N_grid)
    residual = gpg_residual(background.state.psi, background.potential, params.mu, params.v)
    _, _, E = charges(params)
    return [
        spec.nbar, spec.pbar, spec.L, spec.ell, spec.q, params.nu, params.n1, params.n2, params.n3,
        params.mu, params.v, E, residual,
    ]


@router.command(
    "cnoidal",
    summary="링 위 cnoidal 해",
    description="""
    (n̄, p̄, L, ℓ, q) 에 대한 cnoidal 해의 모든 가지, 또는 (J, μ_v, ν) 로 정한 해 하나를 구합니다.

    - solution.csv: 가지마다 n̄, p̄, L, ℓ, q, ν, n1, n2, n3, μ, v, E 와 GPG 잔차
    - profile.csv: 첫 번째 가지의 x, |Ψ₀|², arg Ψ₀
    - psi0.fng1: 첫 번째 가지의 Ψ₀
    - thermo.csv: ∂E/∂N, ∂E/∂P 와 승수, 헤시안, Gibbs-Duhem 잔차
    """,
    experiment="cnoidal",
)
def cnoidal_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg: CnoidalParamsConfig = config.params
    spec, solutions = resolve_solutions(cfg)
    writer = OutputWriter(config)

    writer.write_csv(
        "solution.csv", SOLUTION_COLUMNS, SOLUTION_UNITS,
        [_solution_row(spec, params, cfg.N_grid) for params in solutions],
    )
    first = solutions[0]
    background = cnoidal_background(first, cfg.N_grid)
    psi = background.state.psi
    x = background.grid.x
    writer.write_table(
        "profile.csv",
        {"x": x, "n": np.abs(psi) ** 2, "arg": np.angle(psi)},
        {"x": "xi", "n": "n0", "arg": "rad"},
    )
    writer.write_field("psi0.fng1", psi, first.L, 0.0)

    residuals = matching_residuals(spec, first)
    thermo = thermo_derivatives(spec, nu_hint=first.nu, check=False)
    gd_N, gd_P = gibbs_duhem_check(spec, nu_hint=first.nu)
    hN, hP = default_steps(spec)
    writer.write_csv(
        "thermo.csv",
        ["hN", "hP", "dE_dN", "mu", "dE_dP", "v", "mu_error", "v_error", "E_NN", "E_NP", "E_PP",
         "mu_jacobian_asymmetry", "positive_definite", "gibbs_duhem_N", "gibbs_duhem_P",
         "r_period", "r_density", "r_winding"],
        ["n0*xi", "n0*c*xi", "mu0", "mu0", "c", "c", "1", "1", "1", "1", "1", "1", "1", "1", "1", "1", "1", "1"],
        [[hN, hP, thermo.mu_num, thermo.mu, thermo.v_num, thermo.v, thermo.mu_error, thermo.v_error,
          thermo.hessian[0, 0], thermo.hessian[0, 1], thermo.hessian[1, 1], thermo.asymmetry,
          thermo.is_positive_definite, gd_N, gd_P, *residuals]],
    )
    writer.finish()

    if max(thermo.mu_error, thermo.v_error) > settings.thermo_tol:
        raise ConsistencyError(
            f"∂E/∂N, ∂E/∂P 가 승수와 맞지 않습니다: μ 오차={thermo.mu_error:.2e}, v 오차={thermo.v_error:.2e}"
        )
    logger.info(f"cnoidal 완료: 가지 {len(solutions)}개, 출력 {config.out_dir}")
    return 0


@router.command(
    "bdg",
    summary="Bogoliubov 스펙트럼과 Goldstone-Gibbs 모드",
    description="""
    cnoidal 배경 위 M₀ 의 스펙트럼, Goldstone-Gibbs 모드의 심플렉틱 Gram, Berry-Gibbs 곡률을 계산합니다.

    - spectrum.csv: |ε| 오름차순 고유값과 노름 부호
    - gram.csv: (θ, x, N, P) 순서의 4×4 Gram
    - checks.csv: Gram 오차, F_NP, 영 모드 계수, Gibbs 원천 잔차
    - hybrid.csv: ∂²E 를 대각화한 혼성 모드의 1/M_A, 회전 R 과 원천 잔차
    - mode_<θ|x|N|P>.fng1: 모드 스피너 (version 2)
    """,
    experiment="bdg",
)
def bdg_command(config: RunConfig, args: argparse.Namespace) -> int:
    cfg = config.params
    spec, solutions = resolve_solutions(cfg)
    params = solutions[0]
    h = default_steps(spec, cfg.h_rel)
    writer = OutputWriter(config)

    modes = goldstone_gibbs_modes(spec, h=h, N_grid=cfg.N_grid, nu_hint=params.nu, check=False)
    curvature = berry_gibbs_curvature(spec, h=h, N_grid=cfg.N_grid, nu_hint=params.nu)
    spectrum = bogoliubov_spectrum(modes.background.operator(), n_eigs=cfg.n_eigs)
    rank, span_residual = near_zero_subspace(spectrum, [modes.modes["theta"], modes.modes["x"]])
    source_N, source_P = gibbs_source_check(modes, "N"), gibbs_source_check(modes, "P")

    order = np.argsort(np.abs(spectrum.eigenvalues))
    rows = spectrum.as_rows()
    writer.write_csv(
        "spectrum.csv", ["eps_re", "eps_im", "norm_sign"], ["mu0", "mu0", "1"],
        [[rows[i]["eps_re"], rows[i]["eps_im"], rows[i]["norm_sign"]] for i in order],
    )
    gram_columns = ["mode"] + [f"{b}_{part}" for b in MODE_LABELS for part in ("re", "im")]
    writer.write_csv(
        "gram.csv", gram_columns, ["-"] + ["1"] * (len(gram_columns) - 1),
        [[a] + [x for b in MODE_LABELS for x in (modes.gram.entry(a, b).real, modes.gram.entry(a, b).imag)]
         for a in MODE_LABELS],
    )
    writer.write_csv(
        "checks.csv",
        ["gram_error", "berry_gibbs_F_NP", "zero_mode_rank", "zero_span_residual", "gibbs_source_N", "gibbs_source_P",
         "dmu_dN", "dv_dN", "dmu_dP", "dv_dP"],
        ["1"] * 10,
        [[modes.gram_error, curvature, rank, span_residual, source_N, source_P,
          modes.dmu_dN, modes.dv_dN, modes.dmu_dP, modes.dv_dP]],
    )
    hybrid = hybrid_goldstone_gibbs_modes(modes, thermo_derivatives(spec, h=h, nu_hint=params.nu, check=False))
    writer.write_csv(
        "hybrid.csv",
        ["index", "inverse_mass", "R_N", "R_P", "source_residual"],
        ["1", "1", "1", "1", "1"],
        [[a, hybrid.inverse_masses[a], hybrid.rotation[0, a], hybrid.rotation[1, a], hybrid.source_check(a)]
         for a in range(2)],
    )
    for label in MODE_LABELS:
        z = modes.modes[label]
        writer.write_spinor(f"mode_{label}.fng1", z.u, z.v, params.L, 0.0)
    writer.finish()

    if modes.gram_error > settings.symplectic_tol or abs(curvature) > settings.symplectic_tol:
        raise ConsistencyError(
            f"심플렉틱 검증 실패: Gram 오차={modes.gram_error:.3e}, F_NP={curvature:.3e}"
        )
    logger.info(f"bdg 완료: 영 모드 계수 {rank}, Gram 오차 {modes.gram_error:.2e}, F_NP={curvature:.2e}")
    return 0
