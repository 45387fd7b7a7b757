"""Batch driver: configs, dispatch, caching, determinism, reporting."""

import json
import os

import numpy as np
import pytest

from greenlab import cli, groups, reporting, walks
from greenlab.cli import STATUS_CONFIG, STATUS_CONTRADICTION, STATUS_OK, run
from greenlab.reporting import parse_element, read_report, render_element, report_body


def write_config(path, cfg):
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return str(path)


def f2_delta_config(tmp_path, output="scan.csv"):
    return {
        "kind": "delta-scan",
        "backend": "F_2",
        "measure": {"type": "srw"},
        "scales": list(range(1, 9)),
        "seed": 0,
        "output": str(tmp_path / output),
    }


class TestRun:
    def test_f2_delta_scan_rows(self, tmp_path):
        cfg = f2_delta_config(tmp_path)
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=str(tmp_path / "cache")) == STATUS_OK
        meta, header, rows = read_report(cfg["output"])
        assert len(rows) == 8
        d_idx = header.index("delta")
        for row in rows:
            assert abs(float(row[d_idx]) - 2.0) < 1e-9

    def test_byte_identical_bodies(self, tmp_path):
        cfg = f2_delta_config(tmp_path)
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=str(tmp_path / "cache")) == STATUS_OK
        body1 = report_body(cfg["output"])
        assert run(path, cache_dir=str(tmp_path / "cache")) == STATUS_OK
        body2 = report_body(cfg["output"])
        assert body1 == body2

    def test_malformed_config_no_output(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        out = tmp_path / "never.csv"
        assert run(str(bad)) == STATUS_CONFIG
        assert not out.exists()

    def test_unknown_kind_and_keys(self, tmp_path):
        p1 = write_config(tmp_path / "k.json",
                          {"kind": "mystery", "output": "x.csv"})
        assert run(p1) == STATUS_CONFIG
        cfg = f2_delta_config(tmp_path)
        cfg["surprise"] = 1
        p2 = write_config(tmp_path / "k2.json", cfg)
        assert run(p2) == STATUS_CONFIG

    def test_missing_output_rejected(self, tmp_path):
        cfg = f2_delta_config(tmp_path)
        del cfg["output"]
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_CONFIG

    def test_recurrent_backend_is_numeric_failure_free(self, tmp_path):
        cfg = f2_delta_config(tmp_path)
        cfg["backend"] = "Z^2"
        path = write_config(tmp_path / "cfg.json", cfg)
        # transience guard raises a ValueError -> config-level rejection
        assert run(path) in (STATUS_CONFIG, cli.STATUS_NUMERIC)


class TestCache:
    def z3_config(self, tmp_path):
        return {
            "kind": "delta-scan",
            "backend": "Z^3",
            "measure": {"type": "srw"},
            "scales": [4],
            "seed": 0,
            "output": str(tmp_path / "z3.csv"),
        }

    def test_cache_hit_and_agreement(self, tmp_path, monkeypatch):
        cfg = self.z3_config(tmp_path)
        path = write_config(tmp_path / "cfg.json", cfg)
        cache_dir = str(tmp_path / "cache")
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        first = report_body(cfg["output"])
        files = os.listdir(cache_dir)
        assert any(f.endswith(".green") for f in files)
        # second run must not solve at all: poison the solver
        import greenlab.cli as climod
        real_solve = climod.green.killed_green_solve

        def boom(*a, **k):
            raise AssertionError("cache miss: solver invoked")

        monkeypatch.setattr(climod.green, "killed_green_solve", boom)
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        assert report_body(cfg["output"]) == first
        monkeypatch.setattr(climod.green, "killed_green_solve", real_solve)

    def test_tol_invalidates_key(self, tmp_path):
        cfg = self.z3_config(tmp_path)
        cache_dir = str(tmp_path / "cache")
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        n1 = len(os.listdir(cache_dir))
        cfg["tol"] = 1e-8
        path = write_config(tmp_path / "cfg2.json", cfg)
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        assert len(os.listdir(cache_dir)) == n1 + 1

    def test_corrupt_cache_recomputed(self, tmp_path):
        cfg = self.z3_config(tmp_path)
        cache_dir = str(tmp_path / "cache")
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        first = report_body(cfg["output"])
        for f in os.listdir(cache_dir):
            full = os.path.join(cache_dir, f)
            with open(full, "r+b") as fh:
                fh.truncate(40)           # corrupt the payload
        with pytest.warns(UserWarning):
            assert run(path, cache_dir=cache_dir) == STATUS_OK
        assert report_body(cfg["output"]) == first

    def test_force_recompute(self, tmp_path):
        cfg = self.z3_config(tmp_path)
        cache_dir = str(tmp_path / "cache")
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=cache_dir) == STATUS_OK
        assert run(path, cache_dir=cache_dir, force_recompute=True) == STATUS_OK

    def test_env_var_cache_dir(self, tmp_path, monkeypatch):
        from greenlab.cache import default_cache_dir
        monkeypatch.setenv("GREENLAB_CACHE", str(tmp_path / "envcache"))
        assert default_cache_dir() == str(tmp_path / "envcache")

    def test_cache_roundtrip_values_identical(self, tmp_path, monkeypatch):
        # a cache hit reproduces every value of the saved table exactly;
        # a stale code version is a miss
        from greenlab import cache as cachemod
        from greenlab.green import ball_domain, killed_green_solve
        from greenlab.measures import uniform_on_generators
        Z3 = groups.integer_lattice(3)
        mu = uniform_on_generators(groups.standard_generators(Z3))
        omega = ball_domain(Z3, mu, 5, with_boundary=False)
        table = killed_green_solve(omega, [(0, 0, 0)], mu, tol=1e-10)
        mhash = cachemod.measure_hash({"type": "srw"})
        cachemod.save_table(str(tmp_path), "Z^3", mhash, table)
        omega2 = ball_domain(Z3, mu, 5, with_boundary=False)
        loaded = cachemod.load_table(str(tmp_path), "Z^3", mhash, omega2, 1e-10)
        assert loaded is not None
        assert np.array_equal(loaded.values, table.values)
        monkeypatch.setattr(cachemod, "__version__", "stale")
        assert cachemod.load_table(str(tmp_path), "Z^3", mhash, omega2,
                                   1e-10) is None


class TestOtherKinds:
    def test_envelope_kind(self, tmp_path):
        cfg = {"kind": "envelope", "d_star": 3, "gamma": 2, "alpha": 1,
               "phi": {"kind": "polynomial", "delta": 5.0},
               "r_decades": [0.5, 3.0], "points_per_decade": 3,
               "output": str(tmp_path / "env.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK
        meta, header, rows = read_report(cfg["output"])
        assert meta["verdict"] in ("bounded", "diverging")
        assert header[-4:] == ["r", "lhs", "rhs", "ratio"]

    def test_speed_kind(self, tmp_path):
        cfg = {"kind": "speed", "backend": "Z^3", "measure": {"type": "srw"},
               "n_list": [100], "eps_list": [0.5], "trials": 200, "seed": 3,
               "output": str(tmp_path / "sp.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK

    def test_dispersion_kind_with_product(self, tmp_path):
        cfg = {"kind": "dispersion", "measure": {"type": "stable", "alpha": 1.0},
               "shift": 1, "n_list": [16, 64], "cap": 20000,
               "product_shift": [1, 1], "product_cap": 20000,
               "output": str(tmp_path / "tv.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK
        _, header, rows = read_report(cfg["output"])
        assert "tv_product" in header

    def test_cone_kind(self, tmp_path):
        cfg = {"kind": "cone", "box": 30, "probes": [[2, 3]], "base": [1, 1],
               "n_list": [10, 15], "output": str(tmp_path / "cone.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK

    def test_on_diagonal_kind(self, tmp_path):
        cfg = {"kind": "on-diagonal", "backend": "F_2",
               "measure": {"type": "srw"}, "m_max": 8,
               "output": str(tmp_path / "od.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK
        meta, _, _ = read_report(cfg["output"])
        assert "kesten_root" in meta

    def test_increment_probe_kind(self, tmp_path):
        cfg = {"kind": "increment-probe", "backend": "Z^1",
               "measure": {"type": "stable", "alpha": 1.0},
               "n": 1000, "trials": 50, "checkpoints": [100, 1000],
               "seed": 1, "output": str(tmp_path / "inc.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path) == STATUS_OK

    def test_green_table_kind_with_spd(self, tmp_path):
        cfg = {"kind": "green-table", "backend": "Z^3",
               "measure": {"type": "srw"}, "radius": 3,
               "sources": ["0,0,0"], "boundary_matrix": True,
               "output": str(tmp_path / "gt.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=str(tmp_path / "c")) == STATUS_OK
        meta, _, _ = read_report(cfg["output"])
        assert meta["spd_ok"] is True

    def test_contradiction_status(self, tmp_path, monkeypatch):
        # doctor the dispersion curve to violate TV <= 1: plumbing must abort
        # with the contradiction status
        cfg = {"kind": "dispersion", "measure": {"type": "stable", "alpha": 1.0},
               "shift": 1, "n_list": [16], "cap": 4000,
               "output": str(tmp_path / "bad.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)

        def bogus(pmf, shift, n_list, cap):
            return walks.DispersionCurve(shift, [(16, 1.5, 0.0)], False)

        monkeypatch.setattr(cli.walks, "tv_dispersion_z", bogus)
        assert run(path) == STATUS_CONTRADICTION

    def test_emit_plot_script(self, tmp_path):
        cfg = f2_delta_config(tmp_path)
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, cache_dir=str(tmp_path / "c"),
                   emit_plot_script=True) == STATUS_OK
        assert os.path.exists(cfg["output"] + ".plot.py")

    def test_seed_override(self, tmp_path):
        cfg = {"kind": "speed", "backend": "Z^3", "measure": {"type": "srw"},
               "n_list": [50], "eps_list": [0.5], "trials": 100, "seed": 3,
               "output": str(tmp_path / "s1.csv")}
        path = write_config(tmp_path / "cfg.json", cfg)
        assert run(path, seed=99) == STATUS_OK
        meta, _, _ = read_report(cfg["output"])
        assert meta["seed"] == 99


class TestReporting:
    def test_float_rendering_roundtrip(self):
        for v in (1 / 3, 1.5163860591, 2e-10, 123456.789012):
            assert float(reporting.format_value(v)) == pytest.approx(v, rel=1e-11)

    def test_element_rendering_roundtrip(self):
        Z3 = groups.integer_lattice(3)
        F2 = groups.free_group(2)
        H = groups.heisenberg()
        P = groups.product_with_z(Z3)
        cases = [(Z3, (1, -2, 0)), (H, (3, 2, 6)), (F2, (1, -2, 1)),
                 (F2, ()), (P, ((1, 0, -1), -4))]
        for spec, g in cases:
            assert parse_element(spec, render_element(spec, g)) == g

    def test_empty_rows_header_only(self, tmp_path):
        out = str(tmp_path / "empty.csv")
        reporting.emit_report([], out, ["a", "b"], {"seed": 0})
        meta, header, rows = read_report(out)
        assert header == ["a", "b"] and rows == []

    def test_csv_quoting(self, tmp_path):
        out = str(tmp_path / "q.csv")
        reporting.emit_report([["x,y", 1.0]], out, ["label", "v"], {})
        _, _, rows = read_report(out)
        assert rows[0][0] == "x,y"
