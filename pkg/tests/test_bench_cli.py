import math
import subprocess
import sys

import numpy as np
import pytest

from teapse import bench, io
from teapse.cli import main, parse_manifest
from teapse.dsp import AudioBuffer
from teapse.errors import ConfigError

TOY_CFG = """\
n_fd=2
n_fu=2
conv_channels=4
n_stcnl_groups=1
stcm_channels=4
lstm_hidden=8
spk_blstm_hidden=8
spk_fd_layers=1
embedding_dim=4
"""


# bench

def test_bench_streaming_accounting(toy_model):
    report = bench.bench_rtf(toy_model, 5.0, "streaming")
    assert report["frames"] == 450
    assert 0 < report["rtf_mean"] < math.inf and report["rtf_p95"] >= 0
    text = bench.format_report(report)
    assert "frames=450" in text.splitlines()


def test_bench_offline_and_errors(toy_model):
    report = bench.bench_rtf(toy_model, 5.0, "offline")
    assert report["frames"] == 499 and report["audio_s"] == 5.0
    with pytest.raises(ConfigError):
        bench.bench_rtf(toy_model, 4.0)
    with pytest.raises(ConfigError):
        bench.bench_rtf(toy_model, 5.0, "batch")


# command line

@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "toy.cfg").write_text(TOY_CFG)
    r = np.random.default_rng(0)
    for name in ("noisy", "enroll", "ref"):
        io.write_wav(tmp_path / f"{name}.wav", AudioBuffer(0.1 * r.standard_normal(9600)))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_stats_params(capsys):
    code, out, _ = run(capsys, "stats", "params")
    lines = dict(line.split("=") for line in out.splitlines())
    assert code == 0
    assert {"group.mag_net", "group.com_net", "group.fusion", "group.spk_enc_mag", "group.spk_enc_com"} <= set(lines)
    assert abs(int(lines["total"]) / 22.24e6 - 1) <= 0.2


def test_stats_group_and_macs(capsys, workdir):
    code, out, _ = run(capsys, "stats", "params", "--config", workdir / "toy.cfg", "--group", "fusion")
    assert code == 0 and "total=4840" in out
    code, out, _ = run(capsys, "stats", "macs")
    total = float(dict(line.split("=") for line in out.splitlines())["total_per_second"])
    assert abs(total / 19.66e9 - 1) <= 0.2


def test_schedule_trace(capsys):
    code, out, _ = run(capsys, "schedule", "trace", "--losses", "1.0,0.9,0.95,0.92")
    assert code == 0 and out.splitlines()[-1] == "trace=0.001,0.001,0.001,0.0005"


def test_enhance_deterministic(capsys, workdir):
    args = ["enhance", "--noisy", workdir / "noisy.wav", "--enroll", workdir / "enroll.wav",
            "--embedding", "zero", "--config", workdir / "toy.cfg", "--seed", 4]
    assert run(capsys, *args, "--out", workdir / "a.wav")[0] == 0
    assert run(capsys, *args, "--out", workdir / "b.wav")[0] == 0
    assert run(capsys, *args, "--out", workdir / "s.wav", "--streaming")[0] == 0
    a, b = (workdir / "a.wav").read_bytes(), (workdir / "b.wav").read_bytes()
    assert a == b
    offline = io.read_wav(workdir / "a.wav").samples
    streamed = io.read_wav(workdir / "s.wav").samples
    assert len(streamed) == len(offline) and np.abs(streamed - offline).max() <= 1e-4


def test_enhance_with_weights(capsys, workdir):
    assert run(capsys, "weights", "init", "--out", workdir / "w.tpw", "--config", workdir / "toy.cfg")[0] == 0
    emb = workdir / "e.f32"
    emb.write_bytes(np.ones(4, "<f4").tobytes())
    code, out, _ = run(capsys, "enhance", "--noisy", workdir / "noisy.wav", "--enroll", workdir / "enroll.wav",
                       "--embedding", emb, "--weights", workdir / "w.tpw", "--config", workdir / "toy.cfg",
                       "--out", workdir / "o.wav")
    assert code == 0 and len(io.read_wav(workdir / "o.wav")) == 9600


def test_loss_eval(capsys, workdir):
    code, out, _ = run(capsys, "loss", "eval", "--ref", workdir / "ref.wav", "--est", workdir / "ref.wav",
                       "--which", "l1", "--single")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "which=L1" and len(lines) == 6
    assert float(lines[-1].split("=")[1]) <= -80


def test_rir_gen_deterministic(capsys, workdir):
    for name in ("r1", "r2"):
        code, _, _ = run(capsys, "rir", "gen", "--count", 2, "--rt60", "0.2:0.3", "--out", workdir / name,
                         "--seed", 5, "--len", 9600)
        assert code == 0
    files = sorted(p.name for p in (workdir / "r1").iterdir())
    assert files == ["index.txt", "rir_00000.wav", "rir_00001.wav"]
    assert all((workdir / "r1" / f).read_bytes() == (workdir / "r2" / f).read_bytes() for f in files)


def test_mix(capsys, workdir):
    (workdir / "m.txt").write_text("# seed target noise interferer enroll snr sir rt60\n"
                                   "7 ref.wav noisy.wav - enroll.wav 5 0 0.2\n")
    for name in ("o1", "o2"):
        code, out, _ = run(capsys, "mix", "--manifest", workdir / "m.txt", "--out", workdir / name,
                           "--seed", 1, "--rir-len", 14400)
        assert code == 0 and out.startswith("item=00000")
    for tag in ("noisy", "clean", "enroll"):
        f = f"00000_{tag}.wav"
        assert (workdir / "o1" / f).read_bytes() == (workdir / "o2" / f).read_bytes()


def test_manifest_parsing(tmp_path):
    rows = parse_manifest("1 a.wav - b.wav c.wav 0 5 0.4\n\n", tmp_path)
    assert rows[0]["noise"] is None and rows[0]["interferer"] == tmp_path / "b.wav"
    with pytest.raises(ConfigError):
        parse_manifest("1 a.wav - b.wav", tmp_path)
    with pytest.raises(ConfigError):
        parse_manifest("x a.wav - b.wav c.wav 0 5 0.4", tmp_path)


@pytest.mark.parametrize("argv, code", [
    (["rir", "gen", "--count", "1", "--rt60", "0.05:0.2", "--out", "x"], "config"),
    (["schedule", "trace", "--losses", "1,nan"], "config"),
    (["loss", "eval", "--ref", "/nonexistent.wav", "--est", "/nonexistent.wav"], "io"),
])
def test_errors_single_line(capsys, argv, code):
    rc, out, err = run(capsys, *argv)
    assert rc != 0
    assert err.count("\n") == 1 and err.startswith(f"error: {code}: ")


def test_bad_wav_error(capsys, workdir):
    (workdir / "bad.wav").write_bytes(b"nope")
    rc, _, err = run(capsys, "loss", "eval", "--ref", workdir / "bad.wav", "--est", workdir / "ref.wav")
    assert rc == 2 and err.startswith("error: wav-format: ")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "teapse", "schedule", "trace", "--losses", "1,2,3"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.splitlines()[-1] == "trace=0.001,0.001,0.0005"
