"""This module tests the intrnn command line."""
import csv

import numpy as np
import pytest

from intrnn.cli import (BENCH_COLUMNS, EXIT_INVALID, EXIT_IO, EXIT_USAGE, PWL_COLUMNS,
                        BenchReport, main, read_feature_frames, read_token_sequences)
from intrnn.errors import InputError
from intrnn.runtime import IntegerModel, load


def read_rows(path):
    with open(str(path), 'r', newline='', encoding='utf-8') as f:
        return list(csv.reader(f))


def write_tokens(path, rng, count=6, length=10, vocab=32):
    lines = []
    for _ in range(count):
        sequence = rng.integers(0, vocab, length)
        # a sequence may span lines
        lines.append(" ".join(str(t) for t in sequence[:4]))
        lines.append(" ".join(str(t) for t in sequence[4:]))
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


@pytest.fixture
def workdir(tmp_path, rng):
    """A float model with calibration data, calibrated and converted through the CLI."""
    tokens = write_tokens(tmp_path / "tokens.txt", rng)
    model = tmp_path / "float.json"
    qparams = tmp_path / "qparams.json"
    integer = tmp_path / "int.json"
    assert main(["init", "--out", str(model), "--layers", "lstm,lstm", "--seed", "3"]) == 0
    assert main(["calibrate", "--model", str(model), "--data", str(tokens),
                 "--out", str(qparams)]) == 0
    assert main(["convert", "--model", str(model), "--qparams", str(qparams),
                 "--out", str(integer), "--pieces", "16"]) == 0
    return tmp_path


class TestInputFiles:
    def test_token_sequences(self, tmp_path):
        path = tmp_path / "tokens.txt"
        path.write_text("1 2 3\n4\n\n\n5 6\n", encoding="utf-8")
        sequences = read_token_sequences(str(path))
        assert [list(s) for s in sequences] == [[1, 2, 3, 4], [5, 6]]

    def test_bad_tokens(self, tmp_path):
        path = tmp_path / "tokens.txt"
        path.write_text("1 x 3\n", encoding="utf-8")
        with pytest.raises(InputError):
            read_token_sequences(str(path))

    def test_empty_files(self, tmp_path):
        path = tmp_path / "tokens.txt"
        path.write_text("\n\n", encoding="utf-8")
        assert read_token_sequences(str(path)) == []
        frames = tmp_path / "frames.f32"
        frames.write_bytes(b"")
        assert read_feature_frames(str(frames), 4) == []

    def test_feature_frames(self, tmp_path):
        path = tmp_path / "frames.f32"
        np.arange(12, dtype="<f4").tofile(str(path))
        frames, = read_feature_frames(str(path), 4)
        assert frames.shape == (3, 4)
        with pytest.raises(InputError):
            read_feature_frames(str(path), 5)


class TestExitCodes:
    def test_usage(self, capsys):
        assert main([]) == EXIT_USAGE
        assert main(["fly"]) == EXIT_USAGE
        assert main(["pwl"]) == EXIT_USAGE
        assert capsys.readouterr().err.startswith("intrnn:")

    def test_missing_file(self, tmp_path):
        assert main(["run", "--model", str(tmp_path / "absent.json"),
                     "--input", str(tmp_path / "absent.txt"),
                     "--out", str(tmp_path / "out.csv")]) == EXIT_IO

    def test_invalid_model(self, tmp_path):
        model = tmp_path / "broken.json"
        model.write_text("[1, 2]", encoding="utf-8")
        assert main(["bench", "--model", str(model)]) == EXIT_INVALID

    def test_float_model_where_integer_expected(self, workdir):
        assert main(["bench", "--model", str(workdir / "float.json")]) == EXIT_INVALID

    def test_invalid_settings(self, workdir):
        assert main(["convert", "--model", str(workdir / "float.json"),
                     "--qparams", str(workdir / "qparams.json"),
                     "--out", str(workdir / "x.json"), "--pieces", "0"]) == EXIT_INVALID

    def test_wrong_input_format(self, workdir):
        assert main(["run", "--model", str(workdir / "int.json"), "--features",
                     "--input", str(workdir / "tokens.txt"),
                     "--out", str(workdir / "out.csv")]) == EXIT_INVALID

    def test_empty_calibration_data(self, workdir, capsys):
        """Calibrating on nothing is a calibration error, not an input error."""
        path = workdir / "empty.txt"
        path.write_text("\n", encoding="utf-8")
        assert main(["calibrate", "--model", str(workdir / "float.json"), "--data", str(path),
                     "--out", str(workdir / "q.json")]) == EXIT_INVALID
        assert "at least one batch" in capsys.readouterr().err
        assert not (workdir / "q.json").exists()

    def test_empty_run_input(self, workdir, capsys):
        path = workdir / "empty.txt"
        path.write_text("", encoding="utf-8")
        assert main(["run", "--model", str(workdir / "int.json"), "--input", str(path),
                     "--out", str(workdir / "out.csv")]) == EXIT_INVALID
        assert "no input sequences" in capsys.readouterr().err

    def test_out_of_vocabulary(self, workdir):
        path = workdir / "bad.txt"
        path.write_text("1 2 99\n", encoding="utf-8")
        assert main(["run", "--model", str(workdir / "int.json"), "--input", str(path),
                     "--out", str(workdir / "out.csv")]) == EXIT_INVALID


class TestPipeline:
    """init, calibrate, convert and run chained through files."""

    def test_run(self, workdir):
        out = workdir / "logits.csv"
        assert main(["run", "--model", str(workdir / "int.json"),
                     "--input", str(workdir / "tokens.txt"), "--out", str(out)]) == 0
        rows = read_rows(out)
        assert rows[0][:3] == ["sequence", "step", "logit_0"]
        assert len(rows[0]) == 2 + 32
        assert len(rows) == 1 + 6 * 10
        model = load(workdir / "int.json")
        assert isinstance(model, IntegerModel)
        assert model.config.pieces == 16
        tokens = read_token_sequences(str(workdir / "tokens.txt"))
        first = [int(v) for v in rows[1][2:]]
        assert first == list(model.run(tokens[0])[0])

    def test_fakequant_agrees(self, workdir):
        plain, oracle = workdir / "plain.csv", workdir / "oracle.csv"
        for out, extra in ((plain, []), (oracle, ["--fakequant"])):
            assert main(["run", "--model", str(workdir / "int.json"),
                         "--input", str(workdir / "tokens.txt"), "--out", str(out)] + extra) == 0
        assert read_rows(plain) == read_rows(oracle)

    def test_float_activations(self, workdir):
        out = workdir / "float_act.csv"
        assert main(["run", "--model", str(workdir / "int.json"), "--float-activations",
                     "--input", str(workdir / "tokens.txt"), "--out", str(out)]) == 0
        assert len(read_rows(out)) == 1 + 6 * 10

    def test_exclusive_modes(self, workdir):
        assert main(["run", "--model", str(workdir / "int.json"), "--fakequant",
                     "--float-activations", "--input", str(workdir / "tokens.txt"),
                     "--out", str(workdir / "out.csv")]) == EXIT_USAGE

    def test_feature_model(self, tmp_path, rng):
        frames = tmp_path / "frames.f32"
        rng.uniform(-1.0, 1.0, (20, 5)).astype("<f4").tofile(str(frames))
        model, qparams = tmp_path / "float.json", tmp_path / "qparams.json"
        integer, out = tmp_path / "int.json", tmp_path / "logits.csv"
        assert main(["init", "--out", str(model), "--features", "5", "--classes", "3",
                     "--layers", "madnorm_lstm"]) == 0
        assert main(["calibrate", "--model", str(model), "--features", "--data", str(frames),
                     "--out", str(qparams), "--cell-bits", "8"]) == 0
        assert main(["convert", "--model", str(model), "--qparams", str(qparams),
                     "--out", str(integer)]) == 0
        assert load(integer).config.cell_bits == 8
        assert main(["run", "--model", str(integer), "--features", "--input", str(frames),
                     "--out", str(out)]) == 0
        rows = read_rows(out)
        assert len(rows) == 21
        assert len(rows[0]) == 5


class TestBench:
    def test_csv(self, workdir):
        out = workdir / "bench.csv"
        assert main(["bench", "--model", str(workdir / "int.json"), "--seq-len", "8",
                     "--warmup", "0", "--iters", "1", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert tuple(rows[0]) == BENCH_COLUMNS
        assert [row[0] for row in rows[1:]] == ["float", "irnn_pwl", "irnn_no_qact"]
        assert float(rows[1][3]) == 1.0

    def test_iterations(self):
        with pytest.raises(InputError):
            BenchReport(0, 0)
        with pytest.raises(InputError):
            BenchReport(-1, 5)

    @pytest.mark.slow
    def test_state_size_400(self, tmp_path, rng, capsys):
        """One 400-unit cell, 5 warmup and 100 timed runs over 128 steps."""
        tokens = write_tokens(tmp_path / "tokens.txt", rng, count=4, length=32)
        model, qparams = tmp_path / "float.json", tmp_path / "qparams.json"
        integer, out = tmp_path / "int.json", tmp_path / "bench.csv"
        assert main(["init", "--out", str(model), "--layers", "lstm", "--hidden", "400",
                     "--embed", "64"]) == 0
        assert main(["calibrate", "--model", str(model), "--data", str(tokens),
                     "--out", str(qparams)]) == 0
        assert main(["convert", "--model", str(model), "--qparams", str(qparams),
                     "--out", str(integer), "--pieces", "32"]) == 0
        assert main(["bench", "--model", str(integer), "--seq-len", "128", "--warmup", "5",
                     "--iters", "100", "--out", str(out)]) == 0
        assert "5 warmup, 100 timed runs" in capsys.readouterr().out
        rows = read_rows(out)
        assert [row[0] for row in rows[1:]] == ["float", "irnn_pwl", "irnn_no_qact"]
        assert all(float(row[1]) > 0 and float(row[3]) > 0 for row in rows[1:])


class TestPwlDump:
    def test_rows(self, tmp_path):
        out = tmp_path / "pwl.csv"
        assert main(["pwl", "--function", "tanh", "--range", "-4", "4",
                     "--pieces", "4", "16", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert tuple(rows[0]) == PWL_COLUMNS
        assert rows[0][-1] == "max_error"
        assert len(rows) == 1 + 2 * 256
        assert {row[0] for row in rows[1:]} == {"4", "16"}
        assert max(int(row[5]) for row in rows[1:] if row[0] == "4") == 3

    def test_error_column_falls_with_pieces(self, tmp_path):
        out = tmp_path / "pwl.csv"
        assert main(["pwl", "--function", "tanh", "--range", "-4", "4",
                     "--pieces", "4", "8", "16", "32", "--out", str(out)]) == 0
        errors = {}
        for row in read_rows(out)[1:]:
            errors.setdefault(int(row[0]), set()).add(float(row[6]))
        assert all(len(values) == 1 for values in errors.values())
        ordered = [errors[pieces].pop() for pieces in (4, 8, 16, 32)]
        assert all(later <= earlier for earlier, later in zip(ordered, ordered[1:]))

    def test_identity_has_no_error(self, tmp_path):
        out = tmp_path / "pwl.csv"
        assert main(["pwl", "--function", "identity", "--range", "-2", "2",
                     "--pieces", "1", "--out", str(out)]) == 0
        assert all(float(row[6]) < 1e-12 for row in read_rows(out)[1:])

    def test_bad_pieces(self, tmp_path):
        assert main(["pwl", "--pieces", "0", "--out", str(tmp_path / "pwl.csv")]) == EXIT_INVALID
