from __future__ import annotations

import math
from pathlib import Path

import pytest

from fkpz.config import KINDS, SWEEPABLE, from_dict, load_config, override
from fkpz.errors import ConfigInvalid
from fkpz.expr import Expression

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _base(**extra):
    raw = {
        "kind": "solve-kpz",
        "output": "out",
        "grid": {"dimension": 2, "h": 0.0625},
        "physics": {"s": 0.75, "alpha": 1.1, "T": 1.0, "dt": 0.01},
        "data": {"f": "exp(-|x|^2)", "u0": 0},
    }
    raw.update(extra)
    return raw


def test_valid_config():
    cfg = from_dict(_base(), Path("/base"))
    assert cfg.kind == "solve-kpz"
    assert cfg.grid.shape == "ball" and cfg.grid.h == 0.0625
    assert isinstance(cfg.data.f, Expression) and cfg.data.u0 == 0.0
    assert math.isinf(cfg.data.m)
    assert cfg.output == Path("/base/out")
    assert cfg.option("missing", 3) == 3


@pytest.mark.parametrize(
    "mutate,key",
    [
        (lambda r: r["physics"].pop("s"), "physics.s"),
        (lambda r: r["physics"].update(s=0.4), "physics.s"),
        (lambda r: r["physics"].update(s=1.0), "physics.s"),
        (lambda r: r["physics"].update(alpha=1.0), "physics.alpha"),
        (lambda r: r["physics"].pop("dt"), "physics.dt"),
        (lambda r: r["physics"].update(dt=2.0), "physics.dt"),
        (lambda r: r["grid"].update(dimension=3), "grid.dimension"),
        (lambda r: r["grid"].update(shape="torus"), "grid.shape"),
        (lambda r: r["grid"].pop("h"), "grid.h"),
        (lambda r: r.update(kind="bogus"), "kind"),
        (lambda r: r.update(seed=-1), "seed"),
        (lambda r: r["data"].update(m=0.5), "data.m"),
        (lambda r: r["data"].update(f="os.system('x')"), "data.f"),
        (lambda r: r["physics"].update(convention="other"), "physics.convention"),
        (lambda r: r.pop("grid"), "grid"),
    ],
)
def test_invalid_configs_name_the_key(mutate, key):
    raw = _base()
    mutate(raw)
    with pytest.raises(ConfigInvalid) as err:
        from_dict(raw)
    assert err.value.key == key
    assert str(err.value).startswith(f"{key}: ")


def test_missing_s_message():
    raw = _base()
    raw["physics"].pop("s")
    with pytest.raises(ConfigInvalid, match="physics.s: missing required key"):
        from_dict(raw)


def test_drift_requires_B():
    raw = _base(kind="drift")
    with pytest.raises(ConfigInvalid, match="data.B"):
        from_dict(raw)
    raw["data"]["B"] = ["1", "0"]
    assert len(from_dict(raw).data.B) == 2
    raw["data"]["B"] = ["1"]
    with pytest.raises(ConfigInvalid, match="data.B"):
        from_dict(raw)


def test_h_optional_for_table_kinds():
    for kind in ("calibrate", "scan-alpha"):
        raw = {"kind": kind, "grid": {"dimension": 2}, "physics": {"s": 0.75}}
        assert from_dict(raw).kind == kind


def test_override_copies():
    raw = _base()
    new = override(raw, "alpha", 2.0)
    assert new["physics"]["alpha"] == 2.0 and raw["physics"]["alpha"] == 1.1
    assert override(raw, "m", 3.0)["data"]["m"] == 3.0
    assert set(SWEEPABLE) == {"alpha", "s", "h", "m"}
    with pytest.raises(ConfigInvalid):
        override(raw, "T", 1.0)


def test_load_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "calibrate"\noutput = "o"\n[grid]\ndimension = 1\n[physics]\ns = 0.75\n')
    cfg = load_config(p)
    assert cfg.output == tmp_path / "o"
    p.write_text("kind = = 1")
    with pytest.raises(ConfigInvalid):
        load_config(p)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.toml")


def test_shipped_configs_are_valid():
    files = sorted(CONFIGS.glob("*.toml"))
    assert files
    kinds = {load_config(f).kind for f in files}
    assert kinds == set(KINDS)
