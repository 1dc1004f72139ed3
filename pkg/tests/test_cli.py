import json
import subprocess
import sys

import numpy as np
import pytest

from retouchkit.cli import main
from retouchkit.filters import FilterKind, RetouchStep, execute_program
from retouchkit.image import ImageBuffer, load_image, save_image
from retouchkit.programs import RetouchProgram, serialize_program

from conftest import synthetic_photo, uniform_image


def write_png(tmp_path, name, img, depth=8):
    path = tmp_path / name
    save_image(img, path, depth=depth)
    return str(path)


class TestRun:
    def test_self_reference_is_identity(self, tmp_path, capsys):
        rng = np.random.default_rng(71)
        src = write_png(tmp_path, "src.png", synthetic_photo(rng, 32))
        out = str(tmp_path / "out.png")
        code = main(
            ["run", "--source", src, "--ref", src, "--agent", "rule", "--out", out,
             "--program-out", str(tmp_path / "p.retouch.json"),
             "--session-out", str(tmp_path / "session")]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "stopped_critic_stop"
        assert np.array_equal(load_image(out).data, load_image(src).data)
        assert (tmp_path / "session" / "session.json").exists()

    def test_missing_source_flag_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["run", "--ref", "r.png"])
        assert err.value.code == 2

    def test_chat_without_api_key_exits_2(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("RETOUCH_API_KEY", raising=False)
        src = write_png(tmp_path, "src.png", uniform_image(16, 16, 0.5))
        code = main(
            ["run", "--source", src, "--ref", src, "--agent", "chat",
             "--chat-endpoint", "http://127.0.0.1:9"]
        )
        assert code == 2
        assert "RETOUCH_API_KEY" in capsys.readouterr().err

    def test_unreadable_source_exits_2(self, tmp_path, capsys):
        ref = write_png(tmp_path, "ref.png", uniform_image(16, 16, 0.5))
        code = main(["run", "--source", str(tmp_path / "missing.png"), "--ref", ref])
        assert code == 2

    def test_determinism_across_runs(self, tmp_path):
        rng = np.random.default_rng(73)
        clean = synthetic_photo(rng, 48)
        degraded = execute_program(clean, [RetouchStep(FilterKind.EXPOSURE, -0.5)])
        src = write_png(tmp_path, "src.png", degraded)
        ref = write_png(tmp_path, "ref.png", clean)
        outs = []
        for run_idx in (1, 2):
            out = str(tmp_path / f"out{run_idx}.png")
            assert main(
                ["run", "--source", src, "--ref", ref, "--agent", "rule",
                 "--seed", "42", "--out", out]
            ) == 0
            with open(out, "rb") as fh:
                outs.append(fh.read())
        assert outs[0] == outs[1]


class TestApply:
    def test_empty_program_round_trip(self, tmp_path):
        rng = np.random.default_rng(79)
        src = write_png(tmp_path, "in.png", synthetic_photo(rng, 32))
        prog_path = tmp_path / "empty.retouch.json"
        prog_path.write_text(serialize_program(RetouchProgram()), encoding="utf-8")
        out = str(tmp_path / "out.png")
        assert main(["apply", "--program", str(prog_path), "--input", src, "--output", out]) == 0
        assert np.array_equal(load_image(out).data, load_image(src).data)

    def test_malformed_program_exits_2(self, tmp_path):
        src = write_png(tmp_path, "in.png", uniform_image(8, 8, 0.5))
        bad = tmp_path / "bad.retouch.json"
        bad.write_text('{"steps": [{"filter": "zoom", "param": 3}]}', encoding="utf-8")
        assert main(
            ["apply", "--program", str(bad), "--input", src, "--output", str(tmp_path / "o.png")]
        ) == 2

    def test_missing_input_exits_1(self, tmp_path):
        prog = tmp_path / "p.retouch.json"
        prog.write_text(serialize_program(RetouchProgram()), encoding="utf-8")
        assert main(
            ["apply", "--program", str(prog), "--input", str(tmp_path / "nope.png"),
             "--output", str(tmp_path / "o.png")]
        ) == 1

    def test_scale_consistency_64_vs_1024(self, tmp_path):
        rng = np.random.default_rng(83)
        small = ImageBuffer(data=(0.2 + 0.6 * synthetic_photo(rng, 64).data))
        big = ImageBuffer(data=np.repeat(np.repeat(small.data, 16, axis=0), 16, axis=1))
        program = RetouchProgram(
            (
                RetouchStep(FilterKind.EXPOSURE, 0.3),
                RetouchStep(FilterKind.SATURATION, -0.4),
                RetouchStep(FilterKind.CONTRAST, 0.2),
            )
        )
        prog_path = tmp_path / "p.retouch.json"
        prog_path.write_text(serialize_program(program), encoding="utf-8")
        small_in = write_png(tmp_path, "small.png", small, depth=16)
        big_in = write_png(tmp_path, "big.png", big, depth=16)
        small_out = str(tmp_path / "small_out.png")
        big_out = str(tmp_path / "big_out.png")
        assert main(["apply", "--program", str(prog_path), "--input", small_in, "--output", small_out]) == 0
        assert main(["apply", "--program", str(prog_path), "--input", big_in, "--output", big_out]) == 0
        small_img = load_image(small_out).data.astype(np.float64)
        big_img = load_image(big_out).data.astype(np.float64)
        down = big_img.reshape(64, 16, 64, 16, 3).mean(axis=(1, 3))
        assert np.abs(down - small_img).mean() < 1e-3


class TestEval:
    def test_identical_files(self, tmp_path, capsys):
        rng = np.random.default_rng(89)
        path = write_png(tmp_path, "a.png", synthetic_photo(rng, 16))
        assert main(["eval", "--pred", path, "--gt", path]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report == {"psnr": 100.0, "ssim": 1.0, "delta_e": 0.0}

    def test_shape_mismatch_exits_1(self, tmp_path):
        a = write_png(tmp_path, "a.png", uniform_image(16, 16, 0.5))
        b = write_png(tmp_path, "b.png", uniform_image(16, 12, 0.5))
        assert main(["eval", "--pred", a, "--gt", b]) == 1


class TestPairs:
    def test_three_images_m1_matches_brute_force(self, tmp_path, capsys):
        from retouchkit.scoring import (
            GLOBAL_PROMPTS,
            StatsProvider,
            kl_selection_score,
            prompt_distribution,
        )

        rng = np.random.default_rng(97)
        images = [synthetic_photo(rng, 24) for _ in range(3)]
        names = []
        for i, img in enumerate(images):
            names.append(f"img{i}.png")
            save_image(img, tmp_path / names[-1])
        out = tmp_path / "pairs.json"
        assert main(["pairs", "--dir", str(tmp_path), "--m", "1", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())

        provider = StatsProvider()
        loaded = [load_image(tmp_path / n) for n in sorted(names)]
        dists = [prompt_distribution(provider, img, GLOBAL_PROMPTS) for img in loaded]
        for i, name in enumerate(sorted(names)):
            best, best_d = None, None
            for j in range(3):
                if j == i:
                    continue
                d = kl_selection_score(dists[i], dists[j]) + kl_selection_score(dists[j], dists[i])
                if best_d is None or d < best_d:
                    best, best_d = j, d
            assert doc[name] == [sorted(names)[best]]

    def test_insufficient_dataset_exits_1(self, tmp_path):
        rng = np.random.default_rng(101)
        for i in range(4):
            save_image(synthetic_photo(rng, 16), tmp_path / f"img{i}.png")
        assert main(["pairs", "--dir", str(tmp_path), "--m", "5"]) == 1


def test_console_entry_point_help():
    result = subprocess.run(
        [sys.executable, "-m", "retouchkit.cli", "--help"], capture_output=True, text=True
    )
    assert result.returncode == 0
    assert "run" in result.stdout and "serve" in result.stdout
