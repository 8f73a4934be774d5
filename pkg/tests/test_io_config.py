from pathlib import Path

import numpy as np
import pytest

from chorinfd.checks import random_scalar, random_vector
from chorinfd.config import apply_overrides, dump_config, load_config, parse_config
from chorinfd.errors import ConfigError, DomainMismatch
from chorinfd.grid import Ball, Box, build_grid
from chorinfd.io import read_field, read_field_header, read_grid, write_field, write_grid, write_vtk

from conftest import BUMP, SWIRL

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_field_roundtrip(box16, rng, tmp_path):
    u = random_vector(box16, rng)
    p = write_field(tmp_path / "u.fld", u, extra={"step": 3})
    back = read_field(p, box16)
    assert np.array_equal(back.values, u.values)
    assert read_field_header(p)[0]["extra"] == {"step": 3}
    # the domain is rebuilt from the header when not supplied
    again = read_field(p)
    assert again.domain.same_as(box16)
    s = random_scalar(box16, rng)
    assert np.array_equal(read_field(write_field(tmp_path / "s.fld", s), box16).values, s.values)


def test_field_checksum_detects_corruption(box16, rng, tmp_path):
    p = write_field(tmp_path / "u.fld", random_vector(box16, rng))
    raw = bytearray(p.read_bytes())
    raw[-3] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(ConfigError, match="checksum"):
        read_field(p, box16)


def test_field_rejects_other_domain(box16, rng, tmp_path):
    p = write_field(tmp_path / "u.fld", random_vector(box16, rng))
    with pytest.raises(DomainMismatch):
        read_field(p, build_grid(Box(), 1.0 / 12))


def test_not_a_field(tmp_path):
    p = tmp_path / "x.fld"
    p.write_bytes(b"\xff\xfe\n")
    with pytest.raises(ConfigError):
        read_field(p)


def test_grid_roundtrip(tmp_path):
    g = build_grid(Ball((0.0, 0.0, 0.0), 1.0), 1.0 / 8)
    jpath, _ = write_grid(tmp_path / "ball", g)
    back = read_grid(tmp_path / "ball")
    assert back.same_as(g)
    assert np.array_equal(back.interior, g.interior)
    assert jpath.read_text().count("n_points") == 1


def test_vtk_header(box16, rng, tmp_path):
    p = write_vtk(tmp_path / "a.vtk", box16, {"u": random_vector(box16, rng), "p hi": random_scalar(box16, rng)})
    raw = p.read_bytes()
    assert raw.startswith(b"# vtk DataFile Version 3.0\n")
    assert b"DIMENSIONS 11 11 11\n" in raw
    assert b"VECTORS u double\n" in raw and b"SCALARS p_hi double 1\n" in raw
    with pytest.raises(DomainMismatch):
        write_vtk(tmp_path / "b.vtk", box16, {"u": random_vector(build_grid(Box(), 1.0 / 12), rng)})


def test_acceptance_config_parses():
    cfg, study = load_config(CONFIGS / "acceptance.ini")
    assert cfg.h == 1.0 / 16 and cfg.T == 0.25 and cfg.alpha == 2.0
    assert cfg.time_step == 1.0 / 16
    # the file spells the centre as a triple
    assert cfg.initial == {**BUMP, "center": [0.5, 0.5, 0.5]}
    assert cfg.force == {**SWIRL, "center": [0.5, 0.5, 0.5]}
    assert study["levels"] == [0.125, 0.0625, 0.03125]
    assert cfg.output_dir == str(CONFIGS / "out" / "acceptance")


def test_canonical_roundtrip():
    cfg, study = load_config(CONFIGS / "acceptance.ini")
    text = dump_config(cfg, study)
    cfg2, study2 = parse_config(text)
    assert cfg2 == cfg and study2 == study
    assert dump_config(cfg2, study2) == text


def test_unknown_key_reports_path():
    text = (CONFIGS / "acceptance.ini").read_text()
    with pytest.raises(ConfigError, match=r"^domain\.bogus: unknown key$"):
        parse_config(text.replace("[domain]\n", "[domain]\nbogus = 1\n"))
    with pytest.raises(ConfigError, match="extras: unknown section"):
        parse_config(text + "\n[extras]\nx = 1\n")


def test_schema_version_required():
    text = (CONFIGS / "acceptance.ini").read_text()
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(text.replace("schema_version = 1", "schema_version = 2"))
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(text.replace("[meta]\nschema_version = 1\n", ""))


def test_alpha_outside_range():
    text = (CONFIGS / "acceptance.ini").read_text()
    with pytest.raises(ConfigError, match=r"\(0, 2\]"):
        parse_config(apply_overrides(text, ["discretization.alpha=3"]))


def test_overrides():
    text = (CONFIGS / "acceptance.ini").read_text()
    cfg, _ = parse_config(apply_overrides(text, ["discretization.h=1/32", "output.vtk=true"]))
    assert cfg.h == 1.0 / 32 and cfg.vtk
    with pytest.raises(ConfigError):
        apply_overrides(text, ["discretization.dt=0.1"])
    with pytest.raises(ConfigError):
        apply_overrides(text, ["no_equals_sign"])


def test_value_errors():
    text = (CONFIGS / "acceptance.ini").read_text()
    with pytest.raises(ConfigError, match="discretization.h"):
        parse_config(apply_overrides(text, ["discretization.h=tiny"]))
    with pytest.raises(ConfigError, match="output.vtk"):
        parse_config(apply_overrides(text, ["output.vtk=maybe"]))


def test_mask_domain_from_npy(tmp_path):
    mask = np.zeros((12, 12, 12), dtype=bool)
    mask[1:11, 1:11, 1:11] = True
    np.save(tmp_path / "m.npy", mask)
    text = "\n".join([
        "[meta]", "schema_version = 1",
        "[domain]", "kind = mask", "file = m.npy", "origin = 0 0 0", "voxel = 0.1",
        "[discretization]", "h = 0.1", "T = 0.1", "tau = 0.1",
    ])
    cfg, study = parse_config(text, base_dir=tmp_path)
    assert study is None
    g = build_grid(cfg.domain, cfg.h)
    assert g.n_interior > 0
