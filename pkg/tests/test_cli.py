"""End-to-end command line checks, run in-process through main(argv) so
exit codes and console output are observable without spawning children."""
import json

import numpy as np
import pytest

from marc.cli import build_parser, main
from marc.formats import load_bundle, load_manifest, load_truth, read_vector, write_vector
from marc.reconstructor import ReconConfig
from marc.trainer import SolverConfig

SYNTH_ARGS = ["--attr", "kind=2", "--attr", "tone=3", "--dim", "30",
              "--samples", "18", "--rank-g", "2", "--sparsity", "0.04",
              "--missing-frac", "0.1", "--seed", "3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth + train pipeline shared by the read-only tests."""
    root = tmp_path_factory.mktemp("ws")
    data = root / "data"
    bundle = root / "bundle"
    assert main(["synth", "-o", str(data)] + SYNTH_ARGS) == 0
    assert main(["train", str(data / "manifest.json"), "-o", str(bundle),
                 "--t-max", "40"]) == 0
    return root


class TestSynth:
    def test_dataset_layout(self, workspace):
        data = workspace / "data"
        schema, samples = load_manifest(data / "manifest.json")
        assert [schema.name(i) for i in range(schema.count)] == ["kind", "tone"]
        assert len(samples) == 18
        assert all(s.mask is not None for s in samples)
        truth = load_truth(data / "truth")
        assert truth.data.shape == (30, 18)
        # manifest labels transcribe the generator's assignments
        for n, sample in enumerate(samples):
            for i in range(schema.count):
                expect = schema.labels(i)[truth.assignments[i][n]]
                assert sample.labels[schema.name(i)] == expect

    def test_fully_observed_dataset_omits_masks(self, tmp_path, capsys):
        out = tmp_path / "clean"
        rc = main(["synth", "-o", str(out), "--attr", "kind=2", "--dim", "12",
                   "--samples", "8", "--rank-g", "0", "--sparsity", "0",
                   "--missing-frac", "0", "--seed", "1"])
        assert rc == 0
        assert "wrote 8 samples (12 dims)" in capsys.readouterr().out
        _, samples = load_manifest(out / "manifest.json")
        assert all(s.mask is None for s in samples)
        assert not list((out / "samples").glob("*_mask.marc"))

    def test_bad_attr_flag(self, tmp_path, capsys):
        assert main(["synth", "-o", str(tmp_path / "x"), "--attr", "kind"]) == 2
        assert "--attr needs" in capsys.readouterr().err
        assert main(["synth", "-o", str(tmp_path / "x"),
                     "--attr", "kind=lots"]) == 2


class TestTrain:
    def test_bundle_is_loadable_and_echoes_flags(self, workspace):
        bundle = load_bundle(workspace / "bundle")
        assert bundle.config.t_max == 40
        assert bundle.config.mu0_scale == 25.0
        assert bundle.individual.shape == (30, 18)
        cfg_doc = json.loads((workspace / "bundle" / "config.json").read_text())
        assert cfg_doc["t_max"] == 40
        assert cfg_doc["seed"] == 0

    def test_console_summary_and_warning(self, workspace, tmp_path, capsys):
        rc = main(["train", str(workspace / "data" / "manifest.json"),
                   "-o", str(tmp_path / "b"), "--t-max", "3"])
        assert rc == 0
        captured = capsys.readouterr()
        assert "iterations=3" in captured.out
        assert "residual=" in captured.out
        assert "warning: stopped at t_max=3" in captured.err

    def test_seed_controls_basis_init(self, workspace, tmp_path):
        manifest = str(workspace / "data" / "manifest.json")
        for name, seed in (("b5", "5"), ("b5again", "5"), ("b6", "6")):
            assert main(["train", manifest, "-o", str(tmp_path / name),
                         "--t-max", "2", "--seed", seed]) == 0
        same = load_bundle(tmp_path / "b5"), load_bundle(tmp_path / "b5again")
        assert np.array_equal(same[0].bases[0], same[1].bases[0])
        other = load_bundle(tmp_path / "b6")
        assert not np.array_equal(same[0].bases[0], other.bases[0])

    def test_missing_manifest_is_io_error(self, tmp_path, capsys):
        rc = main(["train", str(tmp_path / "nope.json"), "-o", str(tmp_path / "b")])
        assert rc == 3
        assert "error:" in capsys.readouterr().err


class TestEval:
    def test_report_outputs(self, workspace, tmp_path, capsys):
        rc = main(["eval", "-b", str(workspace / "bundle"),
                   "--truth", str(workspace / "data" / "truth"),
                   "--out-json", str(tmp_path / "r.json"),
                   "--out-txt", str(tmp_path / "r.txt")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "clean_rel_err_observed=" in out
        assert "support_f1=" in out
        doc = json.loads((tmp_path / "r.json").read_text())
        assert set(doc) == {"clean_rel_err_observed", "clean_rel_err_overall",
                            "support_precision", "support_recall",
                            "support_f1", "subspace_angles"}
        assert (tmp_path / "r.txt").read_text() == out


class TestCompleteAndTransfer:
    def test_single_vector_round(self, workspace, tmp_path, capsys):
        sample = workspace / "data" / "samples" / "sample_0000.marc"
        mask = workspace / "data" / "samples" / "sample_0000_mask.marc"
        out = tmp_path / "filled.marc"
        rc = main(["complete", "-b", str(workspace / "bundle"),
                   "-i", str(sample), "-m", str(mask), "-o", str(out),
                   "--t-max", "60"])
        assert rc == 0
        assert "sample_0000.marc: iterations=" in capsys.readouterr().out
        filled = read_vector(out)
        assert filled.shape == (30,)
        assert np.all(np.isfinite(filled))

    def test_directory_fan_out_is_deterministic(self, workspace, tmp_path,
                                                monkeypatch):
        vec_dir = tmp_path / "in"
        mask_dir = tmp_path / "masks"
        vec_dir.mkdir()
        mask_dir.mkdir()
        rng = np.random.default_rng(2)
        for n in range(3):
            write_vector(vec_dir / f"v{n}.marc", rng.standard_normal(30))
            write_vector(mask_dir / f"v{n}.marc",
                         (rng.random(30) >= 0.3).astype(float))
        monkeypatch.setenv("MARC_THREADS", "2")
        outs = []
        for run in ("one", "two"):
            out_dir = tmp_path / run
            rc = main(["complete", "-b", str(workspace / "bundle"),
                       "-i", str(vec_dir), "-m", str(mask_dir),
                       "-o", str(out_dir), "--t-max", "40"])
            assert rc == 0
            outs.append([read_vector(out_dir / f"v{n}.marc") for n in range(3)])
        for a, b in zip(*outs):
            assert np.array_equal(a, b)

    def test_bad_thread_env(self, workspace, tmp_path, monkeypatch, capsys):
        vec_dir = tmp_path / "in"
        vec_dir.mkdir()
        write_vector(vec_dir / "a.marc", np.zeros(30))
        write_vector(vec_dir / "b.marc", np.zeros(30))
        monkeypatch.setenv("MARC_THREADS", "many")
        rc = main(["complete", "-b", str(workspace / "bundle"),
                   "-i", str(vec_dir), "-o", str(tmp_path / "out")])
        assert rc == 2
        assert "MARC_THREADS" in capsys.readouterr().err

    def test_empty_directory(self, workspace, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = main(["complete", "-b", str(workspace / "bundle"),
                   "-i", str(empty), "-o", str(tmp_path / "out")])
        assert rc == 2
        assert "no matrix files" in capsys.readouterr().err

    def test_corrupt_input_is_format_error(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.marc"
        bad.write_bytes(b"JUNKJUNKJUNK")
        rc = main(["complete", "-b", str(workspace / "bundle"),
                   "-i", str(bad), "-o", str(tmp_path / "out.marc")])
        assert rc == 3
        assert "error:" in capsys.readouterr().err

    def test_transfer_routes(self, workspace, tmp_path):
        sample = workspace / "data" / "samples" / "sample_0001.marc"
        args = ["transfer", "-b", str(workspace / "bundle"),
                "-i", str(sample), "--t-max", "60",
                "--target", "tone=tone_2"]
        joint = tmp_path / "joint.marc"
        posthoc = tmp_path / "posthoc.marc"
        assert main(args + ["-o", str(joint)]) == 0
        assert main(args + ["-o", str(posthoc), "--post-hoc"]) == 0
        a = read_vector(joint)
        b = read_vector(posthoc)
        assert a.shape == b.shape == (30,)
        assert np.all(np.isfinite(a)) and np.all(np.isfinite(b))

    def test_transfer_validation(self, workspace, tmp_path, capsys):
        sample = workspace / "data" / "samples" / "sample_0001.marc"
        base = ["transfer", "-b", str(workspace / "bundle"),
                "-i", str(sample), "-o", str(tmp_path / "o.marc")]
        assert main(base + ["--target", "tone"]) == 2
        assert "--target needs" in capsys.readouterr().err
        assert main(base + ["--target", "flavor=tone_2"]) == 2

    def test_no_individual_flag(self, workspace, tmp_path):
        sample = workspace / "data" / "samples" / "sample_0002.marc"
        rc = main(["complete", "-b", str(workspace / "bundle"),
                   "-i", str(sample), "-o", str(tmp_path / "o.marc"),
                   "--no-individual", "--t-max", "40"])
        assert rc == 0

    def test_rank_and_energy_are_exclusive(self, workspace, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main(["complete", "-b", str(workspace / "bundle"),
                  "-i", "x.marc", "-o", "y.marc",
                  "--rank", "2", "--energy", "0.9"])
        capsys.readouterr()


class TestDefaultsStayPinned:
    """The argparse defaults duplicate the config dataclass defaults; this
    keeps the two from drifting apart."""

    def test_train_defaults(self):
        args = build_parser().parse_args(["train", "m.json", "-o", "b"])
        cfg = SolverConfig()
        assert args.lam == cfg.lam
        assert args.eps == cfg.eps
        assert args.t_max == cfg.t_max
        assert args.rho == cfg.rho
        assert args.mu_max == cfg.mu_max
        assert args.mu0_scale == cfg.mu0_scale
        assert args.mu0_norm == cfg.mu0_norm
        assert args.seed == cfg.seed

    def test_recon_defaults(self):
        args = build_parser().parse_args(
            ["complete", "-b", "b", "-i", "i", "-o", "o"])
        cfg = ReconConfig()
        assert args.lam == cfg.lam
        assert args.eps == cfg.eps
        assert args.t_max == cfg.t_max
        assert args.rho == cfg.rho
        assert args.mu_max == cfg.mu_max
        assert args.mu0_scale == cfg.mu0_scale
        assert args.rank is None and args.energy is None
        assert not args.no_individual
