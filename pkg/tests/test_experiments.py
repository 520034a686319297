import numpy as np
import pytest
import torch

from dpsr.data import synthetic_images
from dpsr.experiments import (SweepSpec, dump_feature_channels,
                              emit_comparison_table, emit_lpips_chart,
                              evaluate_generator, run_ablation, run_sweep)
from dpsr.features import AFTER_ACT, RESNET50, VGG19, resnet_tap, vgg_tap
from dpsr.losses import INFINITY
from dpsr.metrics import MetricReport, MetricRow, load_image
from dpsr.networks import GeneratorConfig
from dpsr.training import TrainConfig

from test_training import micro_config


@pytest.fixture(scope="module")
def micro_dataset():
    return synthetic_images(4, size=64, seed=2)


def _report(psnr, ssim, lpips=None):
    return MetricReport([MetricRow("a.png", psnr, ssim, lpips)])


class TestComparisonTable:
    def test_marks_respect_direction(self, tmp_path):
        reports = {
            "m1": _report(25.0, 0.70, 0.15),
            "m2": _report(27.0, 0.75, 0.10),
            "m3": _report(26.0, 0.72, 0.20),
        }
        _, txt = emit_comparison_table(reports, tmp_path / "t")
        text = txt.read_text()
        lines = {l.split()[0]: l for l in text.splitlines()[1:]}
        assert "27.0000**" in lines["m2"] and "0.1000**" in lines["m2"]
        assert "26.0000*" in lines["m3"] and "0.2000" in lines["m3"]
        assert "0.1500*" in lines["m1"]

    def test_single_report_no_marks(self, tmp_path):
        _, txt = emit_comparison_table({"only": _report(25.0, 0.7, 0.1)}, tmp_path / "t")
        assert "*" not in txt.read_text()

    def test_ties_share_best(self, tmp_path):
        reports = {"a": _report(25.0, 0.7), "b": _report(25.0, 0.6)}
        _, txt = emit_comparison_table(reports, tmp_path / "t")
        lines = {l.split()[0]: l for l in txt.read_text().splitlines()[1:]}
        assert "25.0000**" in lines["a"] and "25.0000**" in lines["b"]

    def test_csv_roundtrip_exact(self, tmp_path):
        reports = {"x": _report(25.123456789, 0.71234, 0.09876)}
        csv_path, _ = emit_comparison_table(reports, tmp_path / "t")
        line = csv_path.read_text().splitlines()[1].split(",")
        assert float(line[1]) == reports["x"].mean_psnr
        assert float(line[2]) == reports["x"].mean_ssim
        assert float(line[3]) == reports["x"].mean_lpips


class TestChart:
    def test_chart_written_and_deterministic(self, tmp_path):
        reports = {"a": _report(25, 0.7, 0.15), "b": _report(26, 0.72, 0.12)}
        p1 = emit_lpips_chart(reports, tmp_path / "c1.png")
        p2 = emit_lpips_chart(reports, tmp_path / "c2.png")
        assert p1.read_bytes() == p2.read_bytes()

    def test_requires_lpips(self, tmp_path):
        with pytest.raises(ValueError, match="LPIPS"):
            emit_lpips_chart({"a": _report(25, 0.7)}, tmp_path / "c.png")


class TestSweep:
    def test_mu_sweep_default_cardinality(self):
        spec = SweepSpec(parameter="mu")
        assert len(spec.values) == 7
        assert spec.values[-1] == INFINITY

    def test_beta_defaults(self):
        spec = SweepSpec(parameter="beta_tap")
        assert [t.label() for t in spec.values] == \
            ["beta_1_3", "beta_2_4", "beta_3_6", "beta_4_3"]

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            SweepSpec(parameter="gamma")

    def test_micro_sweep_runs_and_flags_baseline(self, weights_dir, micro_dataset, tmp_path):
        spec = SweepSpec(parameter="mu", values=[0.5, INFINITY],
                         fixed=micro_config(weights_dir, total_iterations=2))
        results = run_sweep(spec, micro_dataset, micro_dataset[:1], tmp_path)
        assert len(results) == 2
        assert all("report" in r for r in results)
        assert results[1]["flags"] == ["vgg_only_baseline"]
        assert (tmp_path / "sweep_table.csv").exists()
        assert (tmp_path / "mu_0.5" / "manifest.yaml").exists()

    def test_failed_run_recorded_sweep_continues(self, weights_dir, micro_dataset, tmp_path):
        bad = micro_config(weights_dir, total_iterations=2,
                           vgg_weights=str(tmp_path / "missing.pt"))
        spec = SweepSpec(parameter="mu", values=[0.5], fixed=bad)
        results = run_sweep(spec, micro_dataset, micro_dataset[:1], tmp_path)
        assert "error" in results[0]

    def test_distinct_seeds_per_run(self, weights_dir, micro_dataset, tmp_path):
        spec = SweepSpec(parameter="mu", values=[0.5, 1.0],
                         fixed=micro_config(weights_dir, total_iterations=1))
        run_sweep(spec, micro_dataset, micro_dataset[:1], tmp_path)
        import yaml
        seeds = [yaml.safe_load((tmp_path / d / "manifest.yaml").read_text())["seed"]
                 for d in ("mu_0.5", "mu_1")]
        assert seeds[0] != seeds[1]


class TestAblation:
    def test_micro_ablation_fingerprints(self, weights_dir, micro_dataset, tmp_path):
        base = micro_config(weights_dir, total_iterations=3)
        results = run_ablation(base, micro_dataset, micro_dataset[:1], tmp_path)
        assert [r["value"] for r in results] == \
            ["vgg_only", "static_weighting", "dynamic_weighting"]
        mu = base.loss_weights.mu
        for rec in results[0]["records"]:
            assert rec["weighted_res_term"] == 0.0
        for rec in results[1]["records"]:
            assert rec["weighted_res_term"] == pytest.approx(rec["l_res"] / mu, rel=1e-5)
        for rec in results[2]["records"]:
            assert rec["weighted_res_term"] == pytest.approx(rec["l_vgg"] / mu, rel=1e-5)


class TestCorrelation:
    def test_micro_correlation_ranks(self, weights_dir, micro_dataset, tmp_path):
        from dpsr.experiments import CORRELATION_CONFIGS, run_correlation
        base = micro_config(weights_dir, total_iterations=1)
        presets = {"tiny": base.generator,
                   "tiny_wide": GeneratorConfig(num_rrdb_blocks=1, feature_width=12,
                                                growth_channels=6)}
        out = run_correlation(base, presets, micro_dataset, micro_dataset[:1], tmp_path)
        labels = [c[0] for c in CORRELATION_CONFIGS]
        assert set(out["reports"]) == {"tiny", "tiny_wide"}
        for reports in out["reports"].values():
            assert list(reports) == labels
        # rank lists are permutations of the four configurations
        for key, order in out["ranks"].items():
            assert sorted(order) == sorted(labels), key
        assert (tmp_path / "rank_orders.yaml").exists()
        assert (tmp_path / "tiny" / "mu_inf" / "metrics.csv").exists()


class TestEvaluateGenerator:
    def test_report_and_sr_dump(self, tmp_path):
        torch.manual_seed(0)
        from dpsr.networks import build_generator, toy_generator_config
        gen = build_generator(toy_generator_config())
        images = synthetic_images(2, size=64, seed=3)
        report = evaluate_generator(gen, images, sr_dir=tmp_path / "sr")
        assert len(report.rows) == 2
        assert (tmp_path / "sr" / "img000.png").exists()


class TestFeatureDump:
    def test_resolution_match_and_errors(self, weights_dir, tmp_path, rng):
        image = rng.random((64, 64, 3))
        paths = dump_feature_channels(
            image, [resnet_tap(1, 2), vgg_tap(3, 3, AFTER_ACT)], [0],
            {VGG19: weights_dir / "vgg19.pt", RESNET50: weights_dir / "resnet50.pt"},
            tmp_path)
        imgs = [load_image(p) for p in paths]
        assert imgs[0].shape == imgs[1].shape  # beta_1_2 vs phi_3_3 resolution
        with pytest.raises(ValueError, match="out of range"):
            dump_feature_channels(image, [resnet_tap(1, 2)], [999],
                                  {RESNET50: weights_dir / "resnet50.pt"}, tmp_path)

    def test_constant_input_near_constant_map(self, weights_dir, tmp_path):
        image = np.full((64, 64, 3), 0.5)
        paths = dump_feature_channels(image, [vgg_tap(1, 1, AFTER_ACT)], [0],
                                      {VGG19: weights_dir / "vgg19.pt"}, tmp_path)
        arr = load_image(paths[0])
        inner = arr[2:-2, 2:-2]
        assert inner.std() <= 0.05
