from __future__ import annotations

import numpy as np
import pytest

from app.core.exceptions import ConfigError, InconclusiveError, ManifestMismatchError
from app.main import main
from app.routers import wigner as wigner_router
from app.services import ces_service
from app.services.ces_service import CellResult
from app.services.run_io_service import (
    OutputWriter,
    load_completed_cells,
    load_run_config,
    parse_config,
    parse_overrides,
    serialize_config,
    verify_manifest,
    write_cell,
    write_outputs,
)
from app.services.wigner_service import EnsembleStats, RunningStats, merge_stats
from app.utils.utils import decode_fng1, encode_field, encode_spinor, read_csv, read_csv_columns

CNOIDAL_ARGS = ["--J=0.5", "--mu_v=1.125", "--nu=0.2", "--ell=1", "--q=0", "--N_grid=64"]


def _fake_cell(cfg):
    kind = "CES" if cfg.v > 0.75 - 0.2 * cfg.Z else "GS"
    return CellResult(cfg.Z, cfg.v, kind, 0.1 if kind == "CES" else 0.0, 0.05 if kind == "CES" else 1e-5)


def _scan_config(out):
    return parse_config("scan", None, {"Z": "0.5:1.0:2", "v": "0.2:0.8:4", "out": str(out)})


# ============== 설정 ==============
def test_cli_overrides_config_file(tmp_path):
    path = tmp_path / "quench.cfg"
    path.write_text("# 퀜치\nZ = 1.0\nv = 0.5  # 느린 흐름\n", encoding="utf-8")
    config = parse_config("quench", path, {"v": "0.8"})
    assert config.params.Z == 1.0
    assert config.params.v == 0.8
    assert config.params.tmax == 400.0


def test_missing_required_key_is_named():
    with pytest.raises(ConfigError) as e:
        parse_config("quench", None, {"v": "0.8"})
    assert e.value.key == "Z"


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as e:
        parse_config("quench", None, {"Z": "1", "v": "0.5", "bogus": "1"})
    assert e.value.key == "bogus"


def test_out_of_range_value_is_rejected():
    with pytest.raises(ConfigError) as e:
        parse_config("quench", None, {"Z": "1", "v": "1.2"})
    assert e.value.key == "v"


def test_malformed_config_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("Z 1.0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config("quench", path)


def test_override_forms():
    assert parse_overrides(["--Z=1.0", "--v", "0.8", "--adaptive"]) == {"Z": "1.0", "v": "0.8", "adaptive": "true"}
    with pytest.raises(ConfigError):
        parse_overrides(["Z=1.0"])


def test_serialized_config_reloads(tmp_path):
    config = parse_config("quench", None, {"Z": "1.0", "v": "0.8", "dt": "0.005", "out": str(tmp_path)})
    reloaded = load_run_config(serialize_config(config))
    assert reloaded.echo() == config.echo()
    assert serialize_config(reloaded) == serialize_config(config)


# ============== 산출물 형식 ==============
def test_field_snapshot_round_trip(rng):
    psi = rng.normal(size=32) + 1j * rng.normal(size=32)
    version, L, t, (decoded,) = decode_fng1(encode_field(psi, 12.5, 3.25))
    assert (version, L, t) == (1, 12.5, 3.25)
    assert np.array_equal(decoded, psi)


def test_spinor_snapshot_round_trip(rng):
    u, v = rng.normal(size=16) + 0j, 1j * rng.normal(size=16)
    version, _, _, (du, dv) = decode_fng1(encode_spinor(u, v, 4.0, 0.0))
    assert version == 2
    assert np.array_equal(du, u) and np.array_equal(dv, v)


def test_snapshot_rejects_bad_header(rng):
    data = encode_field(np.ones(8), 1.0, 0.0)
    with pytest.raises(ValueError):
        decode_fng1(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        decode_fng1(data[:-1])


def test_table_reloads_exactly(tmp_path, rng):
    writer = OutputWriter(_scan_config(tmp_path))
    table = {"t": np.linspace(0.0, 1.0, 7), "n": rng.normal(size=7)}
    writer.write_table("series.csv", table, {"t": "xi/c"})
    columns, units, _ = read_csv(tmp_path / "series.csv")
    assert columns == ["t", "n"] and units == ["xi/c", "1"]
    loaded = read_csv_columns(tmp_path / "series.csv")
    assert np.array_equal(loaded["t"], table["t"])
    assert np.array_equal(loaded["n"], table["n"])


def test_manifest_detects_changed_file(tmp_path):
    writer = OutputWriter(_scan_config(tmp_path))
    writer.write_csv("a.csv", ["x"], ["1"], [[1.0]])
    writer.finish()
    assert len(verify_manifest(tmp_path).files) == 1
    (tmp_path / "a.csv").write_text("# x\n# 1\n2\n", encoding="utf-8")
    with pytest.raises(ManifestMismatchError) as e:
        verify_manifest(tmp_path)
    assert e.value.mismatched == ["a.csv"]


def test_write_outputs_lists_every_file(tmp_path, rng):
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    manifest = write_outputs(
        _scan_config(tmp_path),
        {"series.csv": ({"t": np.arange(4.0), "n": np.ones(4)}, {"t": "xi/c"})},
        {"psi.fng1": (psi, 8.0, 1.5)},
    )
    assert [f.path for f in manifest.files] == ["psi.fng1", "series.csv"]
    assert verify_manifest(tmp_path).files == manifest.files
    _, L, t, (decoded,) = decode_fng1((tmp_path / "psi.fng1").read_bytes())
    assert (L, t) == (8.0, 1.5) and np.array_equal(decoded, psi)


# ============== 상도 재개 ==============
def test_completed_cells_are_reloaded(tmp_path):
    writer = OutputWriter(_scan_config(tmp_path))
    write_cell(writer, CellResult(0.5, 0.2, "GS", 0.0, 1e-5))
    write_cell(writer, CellResult(0.5, 0.6000000000000001, "CES", 0.12, 0.04))
    writer.finish()

    done = load_completed_cells(tmp_path)
    assert set(done) == {(0.5, 0.2), (0.5, 0.6000000000000001)}
    assert done[(0.5, 0.6000000000000001)].kind == "CES"

    (tmp_path / "cells" / "0.5_0.2.csv").write_text("# Z\n# 1\nbroken\n", encoding="utf-8")
    assert set(load_completed_cells(tmp_path)) == {(0.5, 0.6000000000000001)}


def test_missing_cells_directory_means_fresh_scan(tmp_path):
    assert load_completed_cells(tmp_path) == {}


# ============== 명령줄 ==============
def test_no_command_prints_help():
    assert main([]) == 2


def test_config_error_exit_code(tmp_path):
    assert main(["quench", "--v=0.8", f"--out={tmp_path}"]) == 2


def test_invalid_invariant_exits_as_config_error(tmp_path):
    args = ["cnoidal", "--J=0", "--mu_v=1.0", "--nu=0.5", "--ell=1", "--q=0", f"--out={tmp_path}"]
    assert main(args) == 2


def test_cnoidal_run_is_verified_and_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["cnoidal", *CNOIDAL_ARGS, f"--out={first}"]) == 0
    assert main(["cnoidal", *CNOIDAL_ARGS, f"--out={second}"]) == 0
    for name in ("solution.csv", "profile.csv", "thermo.csv", "psi0.fng1"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    solution = read_csv_columns(first / "solution.csv")
    assert solution["nu"][0] == pytest.approx(0.2, abs=1e-9)
    columns, units, _ = read_csv(first / "profile.csv")
    assert columns == ["x", "n", "arg"] and units == ["xi", "n0", "rad"]
    profile = read_csv_columns(first / "profile.csv")
    assert np.all(np.abs(profile["arg"]) <= np.pi)
    np.testing.assert_allclose(profile["n"][np.argmin(np.abs(profile["x"]))], solution["n1"][0], rtol=1e-12)
    assert main(["verify", str(first)]) == 0

    data = bytearray((first / "psi0.fng1").read_bytes())
    data[-1] ^= 0xFF
    (first / "psi0.fng1").write_bytes(bytes(data))
    assert main(["verify", str(first)]) == 1


def test_scan_resumes_from_completed_cells(tmp_path, monkeypatch):
    calls = []

    def run_cell(cfg):
        calls.append((cfg.Z, cfg.v))
        return _fake_cell(cfg)

    monkeypatch.setattr(ces_service, "run_cell", run_cell)
    args = ["scan", "--Z=0.5:1.0:2", "--v=0.2:0.8:4", f"--out={tmp_path}", "--workers=1"]
    assert main(args) == 0
    assert len(calls) > 8

    boundary = read_csv_columns(tmp_path / "boundary.csv")
    by_axis = dict(zip(zip(boundary["axis"], boundary["fixed"]), boundary["critical"]))
    assert by_axis[("v", 0.5)] == pytest.approx(0.65, abs=1e-3)
    assert len(read_csv_columns(tmp_path / "phase_diagram.csv")["kind"]) == 8

    calls.clear()
    assert main(args + ["--bisect=false"]) == 0
    assert calls == []
    assert main(["verify", str(tmp_path)]) == 0


def test_inconclusive_mean_field_still_writes_manifest(tmp_path, monkeypatch, rng):
    samples = rng.normal(size=(4, 3, 5))
    half = merge_stats(RunningStats.from_sample(s) for s in samples)
    stats = EnsembleStats(
        times=np.array([1.0, 2.0, 3.0]), x=np.linspace(-2.0, 2.0, 5), mean_density=half.mean,
        G=half.covariance, n_used=8, n_dropped=0, halves=(half, half), n0_xi=100.0,
    )

    def inconclusive(cfg, **kwargs):
        raise InconclusiveError("guard band")

    monkeypatch.setattr(wigner_router, "run_ensemble", lambda cfg, workers=1: stats)
    monkeypatch.setattr(wigner_router, "run_quench", inconclusive)
    assert main(["tw", "--Z=0.5", "--v=0.5", f"--out={tmp_path}", "--workers=1"]) == 4
    assert (tmp_path / "density.csv").is_file()
    assert main(["verify", str(tmp_path)]) == 0
