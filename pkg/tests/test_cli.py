import io
import json

import numpy as np
import pytest

from atsteg.cli import main
from atsteg.image_io import load_image, save_pgm, synth_cover
from atsteg.learner import load_model
from atsteg.stego import EmbedConfig, change_rate, lsbm_embed


@pytest.fixture(scope="module")
def cover_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("covers")
    for k in range(6):
        img = synth_cover(seed=300 + k, width=48, height=48, smoothness=3.0)
        save_pgm(img.with_id(f"c{k}"), d / f"c{k}.pgm")
    return d


@pytest.fixture(scope="module")
def mixed_dir(tmp_path_factory):
    """Six images, the last two carrying payloads at 0.5 bpp; truth CSV included."""
    d = tmp_path_factory.mktemp("mixed")
    rows = ["id,label", "# comment line"]
    payload = EmbedConfig(algorithm="lsbm", rate=0.5, key=0xBEEF)
    for k in range(6):
        img = synth_cover(seed=500 + k, width=48, height=48, smoothness=3.0).with_id(
            f"m{k}"
        )
        if k >= 4:
            img = lsbm_embed(img, payload).with_id(f"m{k}")
            rows.append(f"m{k},stego")
        else:
            rows.append(f"m{k},cover")
    # write after potential embedding so ids and files line up
        save_pgm(img, d / f"m{k}.pgm")
    (d / "truth.csv").write_text("\n".join(rows) + "\n")
    return d


class TestEmbedCommand:
    def test_embeds_directory(self, cover_dir, tmp_path, capsys):
        out = tmp_path / "stego"
        rc = main(
            ["embed", "--in", str(cover_dir), "--out", str(out), "--rate", "0.5",
             "--key", "a1"]
        )
        assert rc == 0
        assert "embedded 6 images" in capsys.readouterr().out
        manifest = (out / "manifest.csv").read_text().splitlines()
        assert manifest[0] == "id,rate,key_fingerprint"
        assert len(manifest) == 7
        assert all(row.endswith(manifest[1].split(",")[2]) for row in manifest[1:])
        original = load_image(cover_dir / "c0.pgm")
        embedded = load_image(out / "c0.pgm")
        assert embedded.id == "c0"
        assert change_rate(original, embedded) == pytest.approx(0.25, abs=0.02)

    def test_zero_rate_is_usage_error(self, cover_dir, tmp_path, capsys):
        rc = main(
            ["embed", "--in", str(cover_dir), "--out", str(tmp_path / "x"),
             "--rate", "0"]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_non_hex_key_is_usage_error(self, cover_dir, tmp_path, capsys):
        rc = main(
            ["embed", "--in", str(cover_dir), "--out", str(tmp_path / "x"),
             "--rate", "0.5", "--key", "zz"]
        )
        assert rc == 2
        assert "hexadecimal" in capsys.readouterr().err

    def test_missing_input_dir(self, tmp_path, capsys):
        rc = main(
            ["embed", "--in", str(tmp_path / "absent"), "--out", str(tmp_path / "x"),
             "--rate", "0.5"]
        )
        assert rc == 1
        assert "not a directory" in capsys.readouterr().err


class TestAnalyzeCommand:
    def test_json_report_to_stdout(self, mixed_dir, capsys):
        rc = main(["analyze", "--in", str(mixed_dir), "--rate", "0.5", "--key", "b"])
        assert rc == 0
        data = json.loads(capsys.readouterr().out)
        assert len(data["per_image"]) == 6
        assert {p["label"] for p in data["per_image"]} <= {"cover", "stego"}
        assert data["diagnostics"]["n"] == 6

    def test_truth_adds_confusion_to_stderr(self, mixed_dir, capsys):
        rc = main(
            ["analyze", "--in", str(mixed_dir), "--rate", "0.5", "--key", "b",
             "--truth", str(mixed_dir / "truth.csv")]
        )
        assert rc == 0
        captured = capsys.readouterr()
        data = json.loads(captured.out)
        assert "counts" in data and "accuracy" in data
        assert "Acc\tTP\tTN\tFP\tFN" in captured.err

    def test_truth_mismatch_is_usage_error(self, mixed_dir, tmp_path, capsys):
        bad = tmp_path / "truth.csv"
        bad.write_text("id,label\nghost,cover\n")
        rc = main(
            ["analyze", "--in", str(mixed_dir), "--rate", "0.5", "--key", "b",
             "--truth", str(bad)]
        )
        assert rc == 2
        assert "truth/id mismatch" in capsys.readouterr().err

    def test_csv_report_and_saved_model(self, mixed_dir, tmp_path, capsys):
        report_path = tmp_path / "report.csv"
        model_path = tmp_path / "model.json"
        rc = main(
            ["analyze", "--in", str(mixed_dir), "--rate", "0.5", "--key", "b",
             "--format", "csv", "--out", str(report_path),
             "--save-model", str(model_path)]
        )
        assert rc == 0
        assert report_path.read_text().splitlines()[0] == "id,label,decision"
        model = load_model(model_path)
        assert model.input_dim == 686
        capsys.readouterr()

    def test_too_few_images(self, tmp_path, capsys):
        d = tmp_path / "one"
        d.mkdir()
        save_pgm(synth_cover(seed=1, width=48, height=48), d / "only.pgm")
        rc = main(["analyze", "--in", str(d), "--rate", "0.5"])
        assert rc == 2
        assert "at least 2" in capsys.readouterr().err


class TestSearchCommand:
    def test_ranked_output(self, mixed_dir, capsys):
        rc = main(
            ["search", "--in", str(mixed_dir), "--rates", "0.5,0.25", "--key", "7"]
        )
        assert rc == 0
        captured = capsys.readouterr()
        lines = captured.out.splitlines()
        assert lines[0] == "tentative_rate,score,predicted_stego_fraction"
        assert len(lines) == 3
        assert "estimated rate:" in captured.err

    def test_bad_rates_string(self, mixed_dir, capsys):
        rc = main(["search", "--in", str(mixed_dir), "--rates", "0.5,abc"])
        assert rc == 2
        assert "comma-separated" in capsys.readouterr().err

    def test_empty_rates(self, mixed_dir, capsys):
        rc = main(["search", "--in", str(mixed_dir), "--rates", ","])
        assert rc == 2
        assert "empty" in capsys.readouterr().err


class TestStreamCommand:
    def test_stdin_stream_emits_jsonl(self, cover_dir, capsys, monkeypatch):
        paths = "\n".join(str(cover_dir / f"c{k}.pgm") for k in range(5)) + "\n"
        monkeypatch.setattr("sys.stdin", io.StringIO(paths))
        rc = main(["stream", "--stdin", "--rate", "0.5", "--key", "b", "--nmin", "4"])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2  # rounds at n=4 and n=5
        first = json.loads(lines[0])
        assert first["round"] == 1 and first["n"] == 4
        assert set(first["labels"]) == {f"c{k}" for k in range(4)}
        assert all(0.0 < c <= 1.0 for c in first["confidence"].values())
        second = json.loads(lines[1])
        assert second["n"] == 5

    def test_watch_requires_directory(self, tmp_path, capsys):
        rc = main(
            ["stream", "--watch", str(tmp_path / "absent"), "--rate", "0.5"]
        )
        assert rc == 2
        assert "not a directory" in capsys.readouterr().err

    def test_stdin_and_watch_are_exclusive(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stream", "--stdin", "--watch", "/tmp", "--rate", "0.5"])
        assert exc.value.code == 2
        capsys.readouterr()


EXPERIMENT_TOML = """
n_cover = 6
n_stego = 4
seed = 3

[embed]
rate = 0.5
key = 123

[split]
rate = 0.5
key = 11

[[synthetic]]
count = 12
width = 48
height = 48
smoothness = 3.0

[learner]
c_grid = [1.0, 256.0]
gamma_grid = [0.0078125, 0.125]

[stream]
n_min = 7
"""


@pytest.fixture(scope="module")
def spec_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("spec") / "exp.toml"
    path.write_text(EXPERIMENT_TOML)
    return path


class TestExperimentCommand:
    def test_single_run(self, spec_path, tmp_path, capsys):
        out = tmp_path / "result.csv"
        rc = main(["experiment", "--spec", str(spec_path), "--out", str(out)])
        assert rc == 0
        assert "wrote" in capsys.readouterr().out
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "n_cover,n_stego,Acc,TP,TN,FP,FN"
        assert lines[1].startswith("6,4,")

    def test_ratio_sweep(self, spec_path, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(
            ["experiment", "--spec", str(spec_path), "--out", str(out), "--sweep", "5"]
        )
        assert rc == 0
        capsys.readouterr()
        data_rows = [
            l for l in out.read_text().splitlines()
            if l and not l.startswith("#") and not l.startswith("n_cover")
        ]
        assert [r.split(",")[:2] for r in data_rows] == [
            ["10", "0"], ["5", "5"], ["0", "10"]
        ]

    def test_stream_average(self, spec_path, tmp_path, capsys):
        out = tmp_path / "stream.csv"
        rc = main(
            ["experiment", "--spec", str(spec_path), "--out", str(out),
             "--stream-seeds", "0,1"]
        )
        assert rc == 0
        capsys.readouterr()
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "round,n,accuracy,mean_confidence"
        assert lines[1].startswith("1,7,")

    def test_missing_spec_file(self, tmp_path, capsys):
        rc = main(
            ["experiment", "--spec", str(tmp_path / "absent.toml"),
             "--out", str(tmp_path / "o.csv")]
        )
        assert rc == 1
        capsys.readouterr()


class TestFeaturesCommand:
    def test_writes_feature_rows(self, cover_dir, tmp_path, capsys):
        out = tmp_path / "features.csv"
        rc = main(["features", "--in", str(cover_dir), "--out", str(out)])
        assert rc == 0
        capsys.readouterr()
        lines = out.read_text().splitlines()
        header = lines[0].split(",")
        assert header[0] == "image_id" and header[1] == "f0" and header[-1] == "f685"
        assert len(lines) == 7

    def test_invalid_truncation(self, cover_dir, tmp_path, capsys):
        rc = main(
            ["features", "--in", str(cover_dir), "--out", str(tmp_path / "f.csv"),
             "--truncation", "0"]
        )
        assert rc == 2
        assert "truncation" in capsys.readouterr().err


class TestParserBehavior:
    def test_unknown_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["analyze", "--bogus"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_no_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        capsys.readouterr()
