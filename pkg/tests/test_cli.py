import json

import numpy as np
import pytest
import yaml

from rdlab import cli, rdf
from rdlab.config import ConfigError, load, standard_config


def small_raw(N=2, n=64, **kw):
    raw = standard_config(**{"grid": {"N": N, "n": n, "L": 8.0}, "dt": 1 / 256, "t_end": 0.125,
                             "dt_store": 0.0625}).raw
    raw.update(kw)
    return raw


def write_cfg(path, raw):
    path.write_text(json.dumps(raw, indent=1))
    return path


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def run3d(tmp_path_factory):
    base = tmp_path_factory.mktemp("run3d")
    cfg = write_cfg(base / "cfg.json", small_raw(N=3, n=48))
    code = cli.main(["run", "--config", str(cfg), "--out", str(base / "out")])
    return code, base / "out", cfg


class TestRun:
    def test_exit_ok(self, run3d):
        code, out, _ = run3d
        assert code == cli.EXIT_OK
        assert read_json(out / "manifest.json")["status"] == "ok"

    def test_artifacts(self, run3d):
        _, out, _ = run3d
        for name in ("config.json", "diagnostics.ndjson", "diagnostics.csv", "diagnostics.png",
                     "final_midplane.png", "run.ndjson"):
            assert (out / name).is_file(), name
        assert len(list((out / "snapshots").glob("snap_*.rdf"))) == 3

    def test_manifest_complete(self, run3d):
        _, out, cfg = run3d
        man = read_json(out / "manifest.json")
        listed = {f["path"]: f for f in man["files"]}
        on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
        assert set(listed) == on_disk
        for path, entry in listed.items():
            assert entry["sha256"] == cli.sha256_file(out / path)
            assert entry["bytes"] == (out / path).stat().st_size
        assert man["config_hash"] == load(cfg).config_hash()
        assert man["version"] and man["wall_time"] > 0
        assert man["clipped_mass_total"] >= 0 and man["boundary_mass_max"] >= 0

    def test_byte_identical_rerun(self, run3d, tmp_path):
        _, out, cfg = run3d
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        for name in ("diagnostics.ndjson", "run.ndjson", "diagnostics.csv", "diagnostics.png",
                     "snapshots/snap_00002.rdf"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name

    def test_t_end_zero(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.json", small_raw(t_end=0.0))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert len(list((tmp_path / "o" / "snapshots").iterdir())) == 1
        assert len((tmp_path / "o" / "diagnostics.ndjson").read_text().splitlines()) == 1

    def test_yaml_config(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(small_raw(t_end=0.0)))
        assert cli.main(["run", "--config", str(p)]) == 0


class TestExitCodes:
    def _fail(self, tmp_path, raw):
        cfg = write_cfg(tmp_path / "bad.json", raw)
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        return code, read_json(tmp_path / "o" / "failure.json")

    def test_unknown_key(self, tmp_path):
        code, rec = self._fail(tmp_path, small_raw(colour="blue"))
        assert code == cli.EXIT_CONFIG and rec["exit_code"] == 2

    def test_unstable_dt(self, tmp_path):
        code, rec = self._fail(tmp_path, small_raw(dt=0.1, t_end=0.2, dt_store=0.1))
        assert code == cli.EXIT_CONFIG and rec["reason"] == "reaction_stability"

    def test_inadmissible_initial(self, tmp_path):
        bumps = {"n_bumps": 1, "amplitude": 1.0, "width": 3.0, "spread": 0.0}
        code, rec = self._fail(tmp_path, small_raw(initial={"kind": "gaussian_bumps", "params": bumps}))
        assert code == cli.EXIT_CONFIG and rec["reason"] == "inadmissible_initial"

    def test_negative_constant(self, tmp_path):
        code, rec = self._fail(tmp_path, small_raw(initial={"kind": "constant", "params": {"value": -1.0}}))
        assert code == cli.EXIT_CONFIG and rec["reason"] == "inadmissible_initial"

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, monkeypatch):
        from rdlab import solver

        orig = solver.StrangIntegrator.advance
        calls = {"n": 0}

        def poisoned(self, field, sync):
            out = orig(self, field, sync)
            calls["n"] += 1
            if calls["n"] == 20:
                out.data[...] = np.nan
            return out

        monkeypatch.setattr(solver.StrangIntegrator, "advance", poisoned)
        code, rec = self._fail(tmp_path, small_raw())
        assert code == cli.EXIT_NUMERICAL and rec["reason"] == "numerical_failure"
        good = rdf.read_snapshot(tmp_path / "o" / "last_good.rdf")[0]
        assert good.t == pytest.approx(0.0625) and np.all(np.isfinite(good.data))

    def test_invariant_violation(self, tmp_path):
        # a coarse 3-D grid clips more than the 1e-8 budget
        cfg = write_cfg(tmp_path / "c.json", small_raw(N=3, n=32))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_INVARIANT
        assert read_json(tmp_path / "o" / "failure.json")["reason"] == "invariant_violation"
        man = read_json(tmp_path / "o" / "manifest.json")
        assert man["status"] == "invariant_violation"
        assert "failure.json" in {f["path"] for f in man["files"]}


class TestReaders:
    def test_diagnose(self, run3d, tmp_path, capsys):
        _, out, _ = run3d
        assert cli.main(["diagnose", "--slab", str(out), "--out", str(tmp_path)]) == 0
        names = [json.loads(line).get("name") for line in capsys.readouterr().out.splitlines()]
        assert "entropy_monotone" in names and "mass_drift" in names

    def test_diagnose_needs_config(self, run3d, tmp_path):
        _, out, _ = run3d
        snaps = tmp_path / "s"
        snaps.mkdir()
        for p in (out / "snapshots").iterdir():
            (snaps / p.name).write_bytes(p.read_bytes())
        assert cli.main(["diagnose", "--slab", str(snaps)]) == cli.EXIT_CONFIG

    def test_weaknorm(self, run3d, tmp_path, capsys):
        _, out, _ = run3d
        assert cli.main(["weaknorm", "--slab", str(out), "--out", str(tmp_path), "--p", "1.5"]) == 0
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert set(rows[0]) == {"t", "norm", "argmax"} and len(rows[0]["argmax"]) == 3
        assert (tmp_path / "weak_norm.png").is_file()

    def test_rescale(self, run3d, tmp_path, capsys):
        _, out, _ = run3d
        assert cli.main(["rescale", "--slab", str(out), "--eps", "0.5", "--out", str(tmp_path)]) == 0
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        check = rows[-1]
        assert check["details"]["weak_ratio"] == pytest.approx(0.25, rel=1e-10)
        back = rdf.read_slab(tmp_path)
        assert back.grid.L == 16.0

    def test_rescale_bad_eps(self, run3d):
        _, out, _ = run3d
        assert cli.main(["rescale", "--slab", str(out), "--eps", "0.3"]) == cli.EXIT_CONFIG

    def test_degiorgi_coverage(self, run3d):
        _, out, _ = run3d
        # the run is far shorter than the unit cylinder
        assert cli.main(["degiorgi", "--slab", str(out)]) == cli.EXIT_CONFIG

    def test_degiorgi_ladder(self, ci_slabs, tmp_path, capsys):
        slab_dir = tmp_path / "slab"
        rdf.write_slab(slab_dir / "snapshots", ci_slabs[1])
        code = cli.main(["degiorgi", "--slab", str(slab_dir), "--n-max", "4", "--out", str(tmp_path / "o")])
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert [r["n"] for r in rows[:5]] == [0, 1, 2, 3, 4]
        assert rows[5]["name"] == "recursion"
        assert code in (cli.EXIT_OK, cli.EXIT_INVARIANT)
        assert (tmp_path / "o" / "ladder.png").is_file()

    def test_missing_slab(self, tmp_path):
        assert cli.main(["weaknorm", "--slab", str(tmp_path)]) == cli.EXIT_CONFIG


class TestOtherCommands:
    def test_verify(self, capsys):
        assert cli.main(["verify-hypotheses", "--samples", "2000"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_maxprinciple(self, tmp_path):
        bumps = {"n_bumps": 2, "amplitude": 1.0, "width": 1.0, "spread": 0.5, "normalize_max": 1.0}
        raw = small_raw(model={"family": "two_species_exchange", "k": 1.0, "nu": 1.5, "P": 2}, D=[1.0, 2.0],
                        initial={"kind": "gaussian_bumps", "params": bumps})
        cfg = write_cfg(tmp_path / "c.json", raw)
        assert cli.main(["maxprinciple", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "max_principle.png").is_file()

    def test_maxprinciple_needs_two_species(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.json", small_raw())
        assert cli.main(["maxprinciple", "--config", str(cfg)]) == cli.EXIT_CONFIG

    def test_anchor_parse(self):
        assert cli._anchor("1.5,0.25", 3) == (1.5, (0.25, 0.0, 0.0))
        with pytest.raises(ConfigError):
            cli._anchor("1,0,0,0,0", 3)
