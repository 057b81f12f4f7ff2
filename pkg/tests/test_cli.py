"""End-to-end tests for the command line interface.

Every test drives ``anomem.cli.main`` in-process with an argv list and
asserts on exit codes, emitted files, and captured stdout/stderr.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path
from types import SimpleNamespace

import pytest

from anomem._concurrency import resolve_threads
from anomem.cli import main
from anomem.memory import load_bank
from anomem.scoring import ScoreVector, aggregate, baseline_weights

from synth import build_dataset_fixture


def _dir_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _parse_csv(text: str) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in text.splitlines() if ln]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    """Fixture dataset plus a prebuilt bank directory for class alpha."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    manifest = build_dataset_fixture(data, seed=7)
    banks = root / "banks"
    states = data / "states" / "alpha.aeb1"
    rc = main(
        [
            "build",
            "--manifest",
            str(manifest),
            "--class",
            "alpha",
            "--train-id",
            "alpha-anom-00",
            "--out",
            str(banks),
            "--text-states",
            str(states),
        ]
    )
    assert rc == 0
    return SimpleNamespace(root=root, data=data, manifest=manifest, banks=banks, states=states)


class TestBuild:
    def test_outputs_and_report(self, env, tmp_path, capsys):
        out = tmp_path / "banks"
        capsys.readouterr()
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "alpha",
                "--train-id",
                "alpha-anom-00",
                "--out",
                str(out),
                "--text-states",
                str(env.states),
            ]
        )
        assert rc == 0
        captured = capsys.readouterr()
        assert (out / "reference" / "manifest.json").exists()
        assert (out / "anomalous" / "manifest.json").exists()
        assert (out / "text_states.aeb1").exists()
        report_text = (out / "build_report.json").read_text(encoding="utf-8")
        assert captured.out == report_text
        report = json.loads(report_text)
        assert report["class"] == "alpha"
        assert report["train_id"] == "alpha-anom-00"
        assert report["theta"] == 0.25
        assert report["scales"] == [16, 32]
        # 32x32 corner mask: 4 fully covered 16px windows; the 3x3/stride-16
        # 32px grid has coverages (1, .5, .5, .25) in the corner block.
        assert report["counts"] == {
            "16": {"reference": 12, "anomalous": 4},
            "32": {"reference": 5, "anomalous": 4},
        }
        ref = load_bank(out / "reference")
        anom = load_bank(out / "anomalous")
        assert ref.count(16) == 12 and ref.count(32) == 5
        assert anom.count(16) == 4 and anom.count(32) == 4

    def test_deterministic_bank_dirs(self, env, tmp_path):
        argv = [
            "build",
            "--manifest",
            str(env.manifest),
            "--class",
            "alpha",
            "--train-id",
            "alpha-anom-00",
            "--text-states",
            str(env.states),
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert _dir_bytes(a) == _dir_bytes(b)

    def test_theta_out_of_range(self, env, tmp_path, capsys):
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "alpha",
                "--train-id",
                "alpha-anom-00",
                "--out",
                str(tmp_path / "x"),
                "--theta",
                "1.5",
            ]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_class(self, env, tmp_path, capsys):
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "nosuch",
                "--train-id",
                "alpha-anom-00",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2
        assert "nosuch" in capsys.readouterr().err

    def test_unknown_train_id_named_in_error(self, env, tmp_path, capsys):
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "alpha",
                "--train-id",
                "alpha-anom-99",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2
        assert "alpha-anom-99" in capsys.readouterr().err

    def test_normal_train_id_rejected(self, env, tmp_path, capsys):
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "alpha",
                "--train-id",
                "alpha-norm-00",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2
        assert "not labeled anomalous" in capsys.readouterr().err

    def test_maskless_train_id_rejected(self, env, tmp_path, capsys):
        raw = json.loads(env.manifest.read_text(encoding="utf-8"))
        for entry in raw["classes"]["alpha"]:
            if entry["id"] == "alpha-anom-00":
                entry.pop("mask_path")
        stripped = env.data / "dataset-nomask.json"
        stripped.write_text(json.dumps(raw), encoding="utf-8")
        rc = main(
            [
                "build",
                "--manifest",
                str(stripped),
                "--class",
                "alpha",
                "--train-id",
                "alpha-anom-00",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2
        err = capsys.readouterr().err
        assert "alpha-anom-00" in err and "no pixel mask" in err

    def test_train_id_fallback_lookups(self, env, tmp_path):
        # the id may also name the bundle directory or its stored image_id
        renamed = env.data / "alpha" / "renamed-blob"
        if not renamed.exists():
            shutil.copytree(env.data / "alpha" / "alpha-anom-00", renamed)
        raw = json.loads(env.manifest.read_text(encoding="utf-8"))
        raw["classes"]["alpha"] = [
            {
                "id": "opaque-1",
                "bundle_path": "alpha/alpha-anom-01",
                "label": 1,
                "mask_path": "alpha/mask.png",
            },
            {
                "id": "opaque-2",
                "bundle_path": "alpha/renamed-blob",
                "label": 1,
                "mask_path": "alpha/mask.png",
            },
        ]
        alt = env.data / "dataset-altid.json"
        alt.write_text(json.dumps(raw), encoding="utf-8")
        base = ["build", "--manifest", str(alt), "--class", "alpha"]
        # basename of the bundle directory
        assert main(base + ["--train-id", "alpha-anom-01", "--out", str(tmp_path / "a")]) == 0
        # image_id recorded inside the bundle itself
        assert main(base + ["--train-id", "alpha-anom-00", "--out", str(tmp_path / "b")]) == 0


class TestScore:
    def test_csv_shape_and_aggregate(self, env, capsys):
        rc = main(
            [
                "score",
                "--banks",
                str(env.banks),
                "--bundles",
                str(env.data / "alpha" / "alpha-anom-01"),
                str(env.data / "alpha" / "alpha-norm-00"),
            ]
        )
        assert rc == 0
        header, rows = _parse_csv(capsys.readouterr().out)
        assert header == ["image_id", "a_zs", "a_n1", "a_n2", "a_p1", "a_p2", "aggregate"]
        assert [r[0] for r in rows] == ["alpha-anom-01", "alpha-norm-00"]
        parsed = {}
        for row in rows:
            vals = [float(v) for v in row[1:]]
            sc = ScoreVector(a_zs=vals[0], a_n=tuple(vals[1:3]), a_p=tuple(vals[3:5]))
            assert aggregate(sc, baseline_weights(2)) == vals[5]
            parsed[row[0]] = vals[5]
        assert parsed["alpha-anom-01"] > parsed["alpha-norm-00"]

    def test_one_hot_weights_file(self, env, tmp_path, capsys):
        wpath = tmp_path / "w.json"
        wpath.write_text(json.dumps([1.0, 0.0, 0.0, 0.0, 0.0]), encoding="utf-8")
        rc = main(
            [
                "score",
                "--banks",
                str(env.banks),
                "--bundles",
                str(env.data / "alpha" / "alpha-norm-01"),
                "--weights",
                str(wpath),
            ]
        )
        assert rc == 0
        _, rows = _parse_csv(capsys.readouterr().out)
        assert rows[0][6] == rows[0][1]

    def test_wrong_weight_count_rejected(self, env, tmp_path, capsys):
        wpath = tmp_path / "w.json"
        wpath.write_text(json.dumps([0.25, 0.25, 0.25, 0.25]), encoding="utf-8")
        rc = main(
            [
                "score",
                "--banks",
                str(env.banks),
                "--bundles",
                str(env.data / "alpha" / "alpha-norm-01"),
                "--weights",
                str(wpath),
            ]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_text_states(self, env, tmp_path, capsys):
        bare = tmp_path / "bare-banks"
        rc = main(
            [
                "build",
                "--manifest",
                str(env.manifest),
                "--class",
                "alpha",
                "--train-id",
                "alpha-anom-00",
                "--out",
                str(bare),
            ]
        )
        assert rc == 0
        capsys.readouterr()
        rc = main(
            [
                "score",
                "--banks",
                str(bare),
                "--bundles",
                str(env.data / "alpha" / "alpha-norm-00"),
            ]
        )
        assert rc == 2
        assert "text states" in capsys.readouterr().err

    def test_states_fallback_from_banks_dir(self, env, capsys):
        # env.banks holds text_states.aeb1, so --text-states is optional
        rc = main(
            [
                "score",
                "--banks",
                str(env.banks),
                "--bundles",
                str(env.data / "alpha" / "alpha-norm-00"),
            ]
        )
        assert rc == 0
        header, rows = _parse_csv(capsys.readouterr().out)
        assert len(rows) == 1 and len(rows[0]) == len(header)

    def test_scale_mismatch_bundle(self, env, tmp_path, capsys):
        import numpy as np

        from synth import random_unit
        from anomem.bundle_io import EmbeddingBundle, ScaleGrid, write_bundle

        rng = np.random.default_rng(5)
        cells = np.stack([random_unit(rng, 16) for _ in range(4)]).reshape(2, 2, 16)
        grid = ScaleGrid(
            scale_px=48,
            stride_y=48,
            stride_x=48,
            offset_y=0,
            offset_x=0,
            embeddings=cells.astype(np.float32),
        )
        bundle = EmbeddingBundle(
            image_id="odd",
            class_name="alpha",
            image_width=300,
            image_height=300,
            global_embedding=random_unit(rng, 16).astype(np.float32),
            grids=(grid,),
            label=0,
        )
        bpath = tmp_path / "odd"
        write_bundle(bundle, bpath)
        rc = main(["score", "--banks", str(env.banks), "--bundles", str(bpath)])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestValidate:
    def _argv(self, env, out: Path, extra: list[str] | None = None) -> list[str]:
        argv = [
            "validate",
            "--banks",
            str(env.banks),
            "--val-bundles",
            str(env.data / "alpha" / "alpha-anom-01"),
            str(env.data / "alpha" / "alpha-anom-02"),
            str(env.data / "alpha" / "alpha-norm-00"),
            str(env.data / "alpha" / "alpha-norm-01"),
            "--dist",
            "uniform",
            "--out",
            str(out),
        ]
        return argv + (extra or [])

    def test_single_candidate_no_baseline(self, env, tmp_path, capsys):
        out = tmp_path / "v"
        capsys.readouterr()
        rc = main(self._argv(env, out, ["--n", "1", "--no-baseline"]))
        assert rc == 0
        captured = capsys.readouterr()
        trace_lines = (out / "trace.csv").read_text(encoding="utf-8").splitlines()
        assert len(trace_lines) == 2
        stored = json.loads((out / "weights.json").read_text(encoding="utf-8"))
        row = trace_lines[1].split(",")
        assert [float(v) for v in row[1:6]] == [float(w) for w in stored]
        assert json.loads(captured.out) == [float(w) for w in stored]
        assert "best validation AUROC" in captured.err
        assert "over 1 candidates" in captured.err

    def test_baseline_never_beaten(self, env, tmp_path, capsys):
        out = tmp_path / "v"
        rc = main(self._argv(env, out, ["--n", "5", "--seed", "9"]))
        assert rc == 0
        capsys.readouterr()
        trace_lines = (out / "trace.csv").read_text(encoding="utf-8").splitlines()
        assert len(trace_lines) == 7
        aurocs = [float(ln.split(",")[-1]) for ln in trace_lines[1:]]
        assert max(aurocs) >= aurocs[0]

    def test_same_seed_same_bytes(self, env, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self._argv(env, a, ["--n", "4", "--seed", "3"])) == 0
        assert main(self._argv(env, b, ["--n", "4", "--seed", "3"])) == 0
        capsys.readouterr()
        assert (a / "weights.json").read_bytes() == (b / "weights.json").read_bytes()
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()

    def test_unlabeled_bundle_rejected(self, env, tmp_path, capsys):
        clone = tmp_path / "unlabeled"
        shutil.copytree(env.data / "alpha" / "alpha-anom-03", clone)
        mpath = clone / "manifest.json"
        meta = json.loads(mpath.read_text(encoding="utf-8"))
        meta["label"] = None
        mpath.write_text(json.dumps(meta), encoding="utf-8")
        rc = main(
            [
                "validate",
                "--banks",
                str(env.banks),
                "--val-bundles",
                str(clone),
                str(env.data / "alpha" / "alpha-norm-00"),
                "--dist",
                "uniform",
                "--out",
                str(tmp_path / "v"),
            ]
        )
        assert rc == 2
        assert "refusing to guess" in capsys.readouterr().err

    def test_single_class_rejected(self, env, tmp_path, capsys):
        rc = main(
            [
                "validate",
                "--banks",
                str(env.banks),
                "--val-bundles",
                str(env.data / "alpha" / "alpha-norm-00"),
                str(env.data / "alpha" / "alpha-norm-01"),
                "--dist",
                "uniform",
                "--out",
                str(tmp_path / "v"),
            ]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestEval:
    def _argv(self, manifest: Path, out: Path, extra: list[str] | None = None) -> list[str]:
        argv = [
            "eval",
            "--manifest",
            str(manifest),
            "--runs",
            "2",
            "--max-test",
            "8",
            "--seed",
            "0",
            "--scales",
            "16,32",
            "--out",
            str(out),
        ]
        return argv + (extra or [])

    def test_stdout_matches_report(self, env, tmp_path, capsys):
        out = tmp_path / "rep"
        capsys.readouterr()
        rc = main(self._argv(env.manifest, out))
        assert rc == 0
        captured = capsys.readouterr()
        csv_text = (out / "report.csv").read_text(encoding="utf-8")
        assert captured.out == csv_text
        header, rows = _parse_csv(csv_text)
        assert header == ["class", "mode", "mean_auroc", "ci_half_width", "n_runs", "weights_json"]
        assert [r[0] for r in rows] == ["alpha", "beta", "mean"]
        for row in rows[:2]:
            assert row[1] == "composite"
            assert float(row[2]) == 1.0
            assert int(row[4]) == 2
        payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert set(payload["classes"]) == {"alpha", "beta"}
        assert payload["skipped"] == {}
        assert len(payload["config_hash"]) == 16
        log = (out / "run.log").read_text(encoding="utf-8")
        assert "start config=" in log

    def test_same_seed_same_bytes(self, env, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self._argv(env.manifest, a)) == 0
        assert main(self._argv(env.manifest, b)) == 0
        capsys.readouterr()
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

    def test_thread_count_does_not_change_results(self, env, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self._argv(env.manifest, a, ["--threads", "1"])) == 0
        assert main(self._argv(env.manifest, b, ["--threads", "2"])) == 0
        capsys.readouterr()
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
        pa = json.loads((a / "report.json").read_text(encoding="utf-8"))
        pb = json.loads((b / "report.json").read_text(encoding="utf-8"))
        assert pa["classes"] == pb["classes"]

    def test_compat_mode(self, env, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = main(self._argv(env.manifest, out, ["--mode", "winclip-compat"]))
        assert rc == 0
        capsys.readouterr()
        _, rows = _parse_csv((out / "report.csv").read_text(encoding="utf-8"))
        assert all(r[1] == "winclip-compat" for r in rows[:2])
        assert float(rows[0][2]) == 1.0

    def test_validated_weights_with_augmentations(self, tmp_path, capsys):
        data = tmp_path / "augdata"
        manifest = build_dataset_fixture(
            data,
            classes=("alpha",),
            n_normal=4,
            n_anomalous=3,
            seed=11,
            with_augs=True,
            n_augs=3,
        )
        out = tmp_path / "rep"
        rc = main(
            self._argv(
                manifest,
                out,
                ["--weights", "validated", "--n-samples", "3", "--max-test", "5"],
            )
        )
        assert rc == 0
        capsys.readouterr()
        payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
        for run in payload["classes"]["alpha"]["runs"]:
            assert 0.0 <= run["val_auroc"] <= 1.0
            assert len(run["weights"]) == 5

    def test_insufficient_class_skipped(self, env, tmp_path, capsys):
        raw = json.loads(env.manifest.read_text(encoding="utf-8"))
        raw["classes"] = {
            "alpha": raw["classes"]["alpha"],
            "gamma": [
                {
                    "id": "gamma-anom-00",
                    "bundle_path": "alpha/alpha-anom-00",
                    "label": 1,
                    "mask_path": "alpha/mask.png",
                },
                {"id": "gamma-norm-00", "bundle_path": "alpha/alpha-norm-00", "label": 0},
            ],
        }
        raw["text_states"]["gamma"] = raw["text_states"]["alpha"]
        skippy = env.data / "dataset-skip.json"
        skippy.write_text(json.dumps(raw), encoding="utf-8")
        out = tmp_path / "rep"
        rc = main(self._argv(skippy, out))
        assert rc == 0
        captured = capsys.readouterr()
        assert "skipping class gamma" in captured.err
        _, rows = _parse_csv((out / "report.csv").read_text(encoding="utf-8"))
        assert [r[0] for r in rows] == ["alpha", "mean"]
        payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert "gamma" in payload["skipped"]

    def test_all_classes_failing_is_an_error(self, env, tmp_path, capsys):
        rc = main(
            [
                "eval",
                "--manifest",
                str(env.manifest),
                "--runs",
                "1",
                "--scales",
                "48,112",
                "--out",
                str(tmp_path / "rep"),
            ]
        )
        assert rc == 2
        err = capsys.readouterr().err
        assert "skipping class alpha" in err
        assert "every class failed" in err

    def test_config_file_precedence(self, env, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 3}), encoding="utf-8")
        base = [
            "eval",
            "--manifest",
            str(env.manifest),
            "--runs",
            "1",
            "--max-test",
            "6",
            "--scales",
            "16,32",
        ]
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(base + ["--config", str(cfg), "--seed", "5", "--out", str(a)]) == 0
        assert main(base + ["--seed", "5", "--out", str(b)]) == 0
        assert main(base + ["--config", str(cfg), "--out", str(c)]) == 0
        capsys.readouterr()
        ha = json.loads((a / "report.json").read_text(encoding="utf-8"))["config_hash"]
        hb = json.loads((b / "report.json").read_text(encoding="utf-8"))["config_hash"]
        hc = json.loads((c / "report.json").read_text(encoding="utf-8"))["config_hash"]
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert ha == hb
        assert ha != hc

    def test_unknown_config_key(self, env, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}), encoding="utf-8")
        rc = main(
            [
                "eval",
                "--manifest",
                str(env.manifest),
                "--config",
                str(cfg),
                "--out",
                str(tmp_path / "rep"),
            ]
        )
        assert rc == 2
        assert "bogus" in capsys.readouterr().err


class TestArgsAndExitCodes:
    def test_missing_subcommand(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_missing_required_flag(self, capsys):
        assert main(["eval"]) == 2
        capsys.readouterr()

    def test_bad_choice(self, env, tmp_path, capsys):
        rc = main(
            [
                "eval",
                "--manifest",
                str(env.manifest),
                "--mode",
                "bogus",
                "--out",
                str(tmp_path / "rep"),
            ]
        )
        assert rc == 2
        capsys.readouterr()

    def test_internal_error_exits_one(self, env, tmp_path, capsys, monkeypatch):
        import anomem.cli as cli_mod

        def boom(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(cli_mod, "run_task", boom)
        rc = main(
            [
                "eval",
                "--manifest",
                str(env.manifest),
                "--runs",
                "1",
                "--scales",
                "16,32",
                "--out",
                str(tmp_path / "rep"),
            ]
        )
        assert rc == 1
        assert "boom" in capsys.readouterr().err


class TestThreadResolution:
    def test_requested_wins_without_cap(self, monkeypatch):
        monkeypatch.delenv("ANOMEM_THREADS", raising=False)
        assert resolve_threads(3) == 3
        assert resolve_threads(1) == 1

    def test_env_cap_applies(self, monkeypatch):
        monkeypatch.setenv("ANOMEM_THREADS", "2")
        assert resolve_threads(8) == 2
        assert resolve_threads(1) == 1

    def test_zero_means_auto(self, monkeypatch):
        monkeypatch.setenv("ANOMEM_THREADS", "1")
        assert resolve_threads(0) == 1

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("ANOMEM_THREADS", "lots")
        with pytest.raises(ValueError):
            resolve_threads(2)
