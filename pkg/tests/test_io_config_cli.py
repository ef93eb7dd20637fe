import json

import numpy as np
import pytest

from elastophase import cli
from elastophase.config import (
    ConfigError,
    build_minimize,
    build_phase_system,
    build_scenario,
    build_stored_energy,
    load_config,
    resolve_config,
)
from elastophase.fields import Grid
from elastophase.io import ContainerError, content_hash, read_field, write_field


def test_container_roundtrip(tmp_path):
    grid = Grid(5, 3, 1.5, 0.5)
    vals = np.random.default_rng(0).normal(size=grid.node_shape + (2,))
    write_field(tmp_path / "f.bin", grid, vals)
    g, back = read_field(tmp_path / "f.bin")
    assert g == grid and np.array_equal(back, vals)


def test_container_errors(tmp_path):
    grid = Grid(3, 3)
    with pytest.raises(ContainerError):
        write_field(tmp_path / "x.bin", grid, np.zeros((2, 2, 1)))
    write_field(tmp_path / "f.bin", grid, np.zeros(grid.node_shape))
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    for name in ("short.bin", "magic.bin"):
        with pytest.raises(ContainerError):
            read_field(tmp_path / name)


def test_content_hash_stable():
    assert content_hash({"a": 1, "b": 2}) == content_hash({"b": 2, "a": 1})
    assert content_hash(b"x") != content_hash(b"y")


def test_defaults_build():
    cfg = resolve_config({"phases": {"family": "double-well", "wells": [[1.0], [0.0]], "R": 1.5}})
    assert build_phase_system(cfg).m == 2
    assert build_stored_energy(cfg).h == 1
    assert build_minimize(cfg, 3).seed == 3
    assert build_scenario(cfg).name == "two-phase-elastic"


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="grid"):
        resolve_config({"phases": {"family": "double-well", "wells": [[1.0], [0.0]], "R": 1.5},
                        "grid": {"nx": 8, "colour": 1}})


def test_cross_check_mixture_size():
    with pytest.raises(ConfigError, match="stored_energy"):
        resolve_config({"phases": {"family": "product-of-squared-distances",
                                   "wells": [[0, 0], [1, 0], [0, 1]], "R": 2.0}})


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "phases": {,\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_stationary_c4(tmp_path):
    cfg = resolve_config({"phases": {"family": "double-well", "wells": [[1.0], [0.0]], "R": 1.5},
                          "stored_energy": {"c4": "stationary"}})
    assert np.all(build_stored_energy(cfg).c4 > 0)


@pytest.mark.parametrize("name", ["default", "double_well", "straight_interface", "two_phase_elastic"])
def test_shipped_configs_load(name):
    load_config(f"configs/{name}.json")


def test_cli_distance(tmp_path):
    assert cli.main(["distance", "--config", "configs/double_well.json", "--out", str(tmp_path), "--quiet"]) == 0
    d = json.loads((tmp_path / "distance.json").read_text())["distance_matrix"]
    assert d[0][1] == pytest.approx(4 * np.sqrt(2) / 3, abs=1e-3)
    text = (tmp_path / "distance.csv").read_text()
    assert text.startswith("#") and "1.88" in text


def test_cli_bad_config_exit_1(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"phases": {"family": "nope", "wells": [[1], [0]], "R": 1}}))
    assert cli.main(["distance", "--config", str(p), "--out", str(tmp_path), "--quiet"]) == 1


def test_cli_energy_inverted_exit_2(tmp_path):
    cfg = load_config("configs/default.json")
    grid = Grid(**cfg["grid"])
    y = grid.nodes() * np.array([1.0, -1.0])
    write_field(tmp_path / "y.bin", grid, y)
    rc = cli.main(["energy", "--config", "configs/default.json", "--deformation", str(tmp_path / "y.bin"),
                   "--epsilon", "0.1", "--out", str(tmp_path), "--quiet"])
    assert rc == 2
    assert json.loads((tmp_path / "energy.json").read_text())["total"] == "+infinity"


def test_cli_energy_and_sharp(tmp_path):
    args = ["energy", "--config", "configs/default.json", "--out", str(tmp_path), "--quiet"]
    assert cli.main(args + ["--epsilon", "0.1"]) == 0
    diffuse = json.loads((tmp_path / "energy.json").read_text())
    assert diffuse["interface"] == 0.0
    assert cli.main(args + ["--sharp"]) == 0
    assert json.loads((tmp_path / "energy.json").read_text())["epsilon"] == "sharp"


def test_cli_minimize_outputs(tmp_path):
    p = tmp_path / "c.json"
    cfg = json.loads(open("configs/two_phase_elastic.json").read())
    cfg["grid"].update(nx=8, ny=8)
    cfg["minimize"].update(max_outer_iters=5, checkpoint_every=0)
    p.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert cli.main(["minimize", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    for name in ("history.csv", "deformation.bin", "phase.bin", "minimize.json", "timing.json"):
        assert (out / name).exists()
    g, z = read_field(out / "phase.bin")
    assert g == Grid(8, 8) and z.shape[-1] == 1


def test_cli_sweep_reproducible(tmp_path):
    p = tmp_path / "c.json"
    cfg = json.loads(open("configs/straight_interface.json").read())
    cfg["grid"].update(nx=16, ny=16)
    cfg["minimize"]["max_outer_iters"] = 3
    cfg["sweep"]["epsilons"] = [0.25, 0.125]
    p.write_text(json.dumps(cfg))
    for d in ("a", "b"):
        assert cli.main(["gamma-sweep", "--config", str(p), "--out", str(tmp_path / d), "--quiet"]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_cli_verify(tmp_path):
    assert cli.main(["verify", "--config", "configs/default.json", "--out", str(tmp_path), "--quiet"]) == 0
