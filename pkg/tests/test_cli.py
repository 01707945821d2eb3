import json
from pathlib import Path

import numpy as np
import pytest

from spadcal import __version__
from spadcal.cli import main
from spadcal.streams import MAGIC


def base_config(out_dir, **overrides):
    cfg = {
        "schema": 1,
        "scenario": "demo",
        "seed": 77,
        "duration_s": 0.02,
        "source": {"kind": "pulsed_sps", "rep_rate_hz": 20e6,
                   "p0": 0.977, "p1": 0.0228, "p2": 0.0002, "lifetime_s": 4e-9},
        "spad": {"eta0": 0.665, "dead_time_s": 2e-8, "p_after": 0.01,
                 "dark_rate_cps": 200.0},
        "out": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, **overrides):
    cfg = base_config(tmp_path / "out", **overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, Path(cfg["out"])


class TestSimulate:
    def test_writes_streams_and_counters(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        photons = out / "demo_photons.bin"
        clicks = out / "demo_clicks.bin"
        assert photons.read_bytes()[:8] == MAGIC
        assert clicks.read_bytes()[:8] == MAGIC
        sidecar = json.loads((out / "demo_clicks.bin.json").read_text())
        assert sidecar["photons_in"] > 0
        assert 0 < sidecar["clicks"] <= sidecar["photons_in"] + sidecar["dark_clicks"] \
            + sidecar["afterpulse_clicks"]
        assert sidecar["_meta"]["toolkit_version"] == __version__
        summary = json.loads((out / "demo_summary.json").read_text())
        assert summary["_meta"]["toolkit_version"] == __version__
        assert len(summary["_meta"]["config_sha256"]) == 64

    def test_invalid_distribution_names_field(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        bad = json.loads(cfg.read_text())
        bad["source"]["p1"] = 0.5  # probabilities no longer sum to 1
        cfg.write_text(json.dumps(bad))
        assert main(["simulate", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "p0+p1+p2" in err

    def test_missing_seed_rejected(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        bad = json.loads(cfg.read_text())
        del bad["seed"]
        cfg.write_text(json.dumps(bad))
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "seed" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        first = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert main(["simulate", "--config", str(cfg)]) == 0
        second = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert first == second

    def test_hbt_pair(self, tmp_path):
        cfg, out = write_config(tmp_path, hbt=True)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert (out / "demo_clicks_a.bin").exists()
        assert (out / "demo_clicks_b.bin").exists()


class TestG2Command:
    def test_end_to_end(self, tmp_path):
        cfg, out = write_config(tmp_path, hbt=True, duration_s=0.1)
        assert main(["simulate", "--config", str(cfg)]) == 0
        code = main([
            "g2", "--clicks-a", str(out / "demo_clicks_a.bin"),
            "--clicks-b", str(out / "demo_clicks_b.bin"),
            "--rep-rate", "2e7", "--out", str(out), "--name", "demo",
        ])
        assert code == 0
        assert (out / "demo_histogram.csv").read_text().startswith("lag_ns,counts")
        fit = json.loads((out / "demo_g2.json").read_text())
        assert 0.0 <= fit["g2_zero"] < 2.0
        assert fit["_meta"]["toolkit_version"] == __version__


class TestAllanCommand:
    def test_curve_and_choice(self, tmp_path):
        rng = np.random.default_rng(3)
        trace = tmp_path / "trace.csv"
        trace.write_text("counts\n" + "\n".join(str(int(v)) for v in rng.poisson(1e5, 600)))
        code = main(["allan", "--trace", str(trace), "--taus", "1,2,5,10,20,50",
                     "--out", str(tmp_path), "--name", "t"])
        assert code == 0
        lines = (tmp_path / "t_allan.csv").read_text().splitlines()
        assert lines[0] == "tau_s,sigma_rel"
        result = json.loads((tmp_path / "t_allan.json").read_text())
        # white noise: the largest tau wins
        assert result["optimal_tau_s"] == 50.0

    def test_bad_header(self, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        trace.write_text("values\n1\n2\n")
        assert main(["allan", "--trace", str(trace), "--taus", "1"]) == 2


class TestCalibrateCommand:
    def _files(self, tmp_path, u_volt=None):
        from spadcal.calibration import MeasurementSequence
        from spadcal.constants import HC

        flux = 4.5e5
        v = flux * HC / 784.7e-9 * 0.5562e12
        seq = MeasurementSequence(
            step_duration_s=60.0,
            n_click_1_cps=flux * 0.66, u_volt=u_volt if u_volt is not None else v,
            n_click_2_cps=flux * 0.66, n_dark_cps=0.0,
            u0_1_volt=0.0, u0_2_volt=0.0, wavelength_m=784.7e-9,
            rep_rate_hz=20e6, g2_zero=0.17, g2_zero_u=0.02, p_a=0.01, p_a_u=0.001,
        )
        seq_path = tmp_path / "seq.json"
        seq.to_json(seq_path)
        lnpd_path = tmp_path / "lnpd.json"
        lnpd_path.write_text(json.dumps({
            "responsivity_v_per_w": 0.5562e12,
            "responsivity_rel_u": 0.0019 / 0.5562,
        }))
        return seq_path, lnpd_path

    def test_estimate_with_budget(self, tmp_path, capsys):
        seq_path, lnpd_path = self._files(tmp_path)
        code = main(["calibrate", "--sequence", str(seq_path), "--lnpd", str(lnpd_path),
                     "--out", str(tmp_path)])
        assert code == 0
        result = json.loads((tmp_path / "calibration_efficiency.json").read_text())
        assert result["eta"] == pytest.approx(0.66 * (1 - 0.01) / (1 - result["epsilon"]),
                                              rel=1e-9)
        assert any(name == "lnpd_responsivity" for name, _ in result["budget"])
        out = capsys.readouterr().out
        assert "eta =" in out and "lnpd_responsivity" in out

    def test_corrections_off_raw_ratio(self, tmp_path):
        seq_path, lnpd_path = self._files(tmp_path)
        code = main(["calibrate", "--sequence", str(seq_path), "--lnpd", str(lnpd_path),
                     "--no-epsilon", "--no-afterpulse", "--out", str(tmp_path),
                     "--name", "raw"])
        assert code == 0
        result = json.loads((tmp_path / "raw_efficiency.json").read_text())
        assert result["eta"] == pytest.approx(0.66, rel=1e-9)
        assert result["epsilon"] == 0.0

    def test_below_background_documented_exit(self, tmp_path, capsys):
        seq_path, lnpd_path = self._files(tmp_path, u_volt=0.0)
        # U = 0 == U0 is caught by sequence analysis as a numerical failure
        code = main(["calibrate", "--sequence", str(seq_path), "--lnpd", str(lnpd_path),
                     "--out", str(tmp_path)])
        assert code == 3
        assert "background" in capsys.readouterr().err


class TestFitCommand:
    def _write_points(self, tmp_path, shuffle=False):
        from spadcal.deadtime import PulsedSpsModel, eta_model

        model = PulsedSpsModel(eta_s=0.0227, dead_time_s=2e-8)
        rng = np.random.default_rng(11)
        rows = []
        for r in (20e6, 30e6, 40e6, 60e6, 80e6):
            eta = eta_model(model, 0.665, r).eta
            u = eta * 0.003
            rows.append(f"{r!r},{eta + rng.normal(0, u)!r},{u!r}")
        if shuffle:
            rows = [rows[3], rows[0], rows[4], rows[2], rows[1]]
        path = tmp_path / ("pts_shuffled.csv" if shuffle else "pts.csv")
        path.write_text("x,eta,u_eta\n" + "\n".join(rows) + "\n")
        return path

    def test_fit_and_curve(self, tmp_path):
        pts = self._write_points(tmp_path)
        code = main(["fit", "--data", str(pts), "--model", "pulsed_sps",
                     "--eta-s", "0.0227", "--dead-time", "2e-8",
                     "--out", str(tmp_path), "--name", "psps"])
        assert code == 0
        result = json.loads((tmp_path / "psps_fit.json").read_text())
        assert abs(result["eta0"] - 0.665) < 3 * result["uncertainty"]
        curve = (tmp_path / "psps_model_curve.csv").read_text().splitlines()
        assert curve[0] == "x,eta"
        assert len(curve) == 201

    def test_order_invariance(self, tmp_path):
        a = self._write_points(tmp_path)
        b = self._write_points(tmp_path, shuffle=True)
        main(["fit", "--data", str(a), "--model", "pulsed_sps", "--eta-s", "0.0227",
              "--dead-time", "2e-8", "--out", str(tmp_path), "--name", "a"])
        main(["fit", "--data", str(b), "--model", "pulsed_sps", "--eta-s", "0.0227",
              "--dead-time", "2e-8", "--out", str(tmp_path), "--name", "b"])
        ra = json.loads((tmp_path / "a_fit.json").read_text())
        rb = json.loads((tmp_path / "b_fit.json").read_text())
        assert ra["eta0"] == rb["eta0"]
        assert ra["uncertainty"] == rb["uncertainty"]

    def test_combine_weighted_average(self, tmp_path):
        for name, (v, u) in (("f1", (0.659, 0.003)), ("f2", (0.647, 0.005)),
                             ("f3", (0.61, 0.01))):
            (tmp_path / f"{name}.json").write_text(json.dumps({"eta0": v, "uncertainty": u}))
        code = main(["fit", "--combine", str(tmp_path / "f1.json"), str(tmp_path / "f2.json"),
                     str(tmp_path / "f3.json"), "--out", str(tmp_path), "--name", "avg"])
        assert code == 0
        result = json.loads((tmp_path / "avg_eta0.json").read_text())
        assert result["eta0"] == pytest.approx(0.65298, abs=1e-4)
        assert result["uncertainty"] == pytest.approx(0.00249, abs=1e-4)

    def test_missing_model_args(self, tmp_path, capsys):
        pts = self._write_points(tmp_path)
        assert main(["fit", "--data", str(pts), "--model", "pulsed_sps",
                     "--out", str(tmp_path)]) == 2
        assert "eta-s" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 4
