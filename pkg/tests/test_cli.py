import json

import numpy as np
import pytest

from lowra.cli import main
from lowra.fileformat import read_container, read_tensor, write_tensor


@pytest.fixture
def workdir(tmp_path, rng):
    write_tensor(tmp_path / "a.lwt", rng.standard_normal((16, 128)).astype(np.float32))
    write_tensor(tmp_path / "b.lwt", rng.standard_normal((8, 64)).astype(np.float32))
    return tmp_path


def run(*args):
    return main([str(a) for a in args])


def test_staged_workflow(workdir, capsys):
    d = workdir
    assert run("fit-maps", d / "a.lwt", d / "b.lwt", "-o", d / "maps.json") == 0
    assert json.loads((d / "maps.json").read_text())
    assert run("assign", d / "maps.json", "--bpp", "2.5", "-o", d / "asg.json") == 0
    assert "OPTIMAL" in capsys.readouterr().out
    assert run("quantize", d / "a.lwt", d / "b.lwt", "--maps", d / "maps.json",
               "--assignment", d / "asg.json", "-o", d / "q.lwqc") == 0
    layers = read_container(d / "q.lwqc")
    code_bits = sum(l.code_bits for l in layers)
    assert code_bits <= 2.5 * (16 * 128 + 8 * 64)
    assert run("init-lowrank", d / "q.lwqc", d / "a.lwt", d / "b.lwt", "--rank", 4,
               "--method", "pissa", "-o", d / "qa.lwqc") == 0
    assert all(l.factors is not None for l in read_container(d / "qa.lwqc"))
    assert run("dequantize", d / "qa.lwqc", "--layer", "a", "--with-adapters", "-o", d / "a_hat.lwt") == 0
    assert read_tensor(d / "a_hat.lwt").shape == (16, 128)
    capsys.readouterr()
    assert run("inspect", d / "qa.lwqc", "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert info


def test_uniform_quantize_and_dequantize(workdir):
    d = workdir
    assert run("quantize", d / "b.lwt", "--precision", 2, "-o", d / "u.lwqc") == 0
    (layer,) = read_container(d / "u.lwqc")
    assert layer.precisions.tolist() == [2] * 8
    assert run("dequantize", d / "u.lwqc", "-o", d / "u.lwt") == 0
    assert read_tensor(d / "u.lwt").tobytes() == layer.dequantize().tobytes()


def test_refine_maps(workdir, rng):
    d = workdir
    run("quantize", d / "a.lwt", "--precision", 2, "-o", d / "q.lwqc")
    assert run("refine-maps", d / "q.lwqc", d / "a.lwt", "--steps", 20, "-o", d / "r.lwqc") == 0
    before = read_container(d / "q.lwqc")[0]
    after = read_container(d / "r.lwqc")[0]
    w = read_tensor(d / "a.lwt")
    assert after.packed == before.packed
    assert ((after.dequantize() - w) ** 2).mean() <= ((before.dequantize() - w) ** 2).mean() + 1e-9
    write_tensor(d / "g.lwt", rng.standard_normal((16, 128)).astype(np.float32))
    assert run("refine-maps", d / "q.lwqc", d / "a.lwt", "--grads", f"a={d / 'g.lwt'}",
               "--steps", 2, "--step-size", 1e-4, "-o", d / "r2.lwqc") == 0


def test_refine_rejects_gradient_shape(workdir):
    d = workdir
    run("quantize", d / "a.lwt", "--precision", 2, "-o", d / "q.lwqc")
    assert run("refine-maps", d / "q.lwqc", d / "a.lwt", "--grads", f"a={d / 'b.lwt'}",
               "-o", d / "r.lwqc") == 1


def test_estimate_mem(capsys, workdir):
    assert run("estimate-mem", "--dims", "4096x4096", "--precision", 2, "--json") == 0
    totals = json.loads(capsys.readouterr().out)["totals"]
    assert totals["packed"] == 4194304 and totals["absmax"] == 1048576
    assert run("estimate-mem", "--model", "llama2-7b", "--mode", "finetune") == 0
    assert "optimizer" in capsys.readouterr().out
    run("quantize", workdir / "b.lwt", "--precision", 4, "-o", workdir / "q.lwqc")
    capsys.readouterr()
    assert run("estimate-mem", "--container", workdir / "q.lwqc", "--json") == 0
    assert json.loads(capsys.readouterr().out)["totals"]["packed"] == 8 * 32


def test_pipeline_and_report(workdir, capsys):
    d = workdir
    assert run("pipeline", d / "a.lwt", d / "b.lwt", "--bpp", 2.5, "--rank", 2, "--loftq-steps", 2,
               "--clusters-per-group", 4, "-o", d / "p.lwqc", "--report", d / "rep.json") == 0
    out = capsys.readouterr().out
    assert "achieved bpp" in out and "memory" in out
    report = json.loads((d / "rep.json").read_text())
    assert report["assignment"]["achieved_bpp"] <= 2.5


def test_std_stats_and_import_raw(tmp_path, capsys, rng):
    raw = rng.standard_normal((4, 8)).astype("<f4")
    raw.tofile(tmp_path / "w.bin")
    assert run("import-raw", tmp_path / "w.bin", "--shape", "4x8", "-o", tmp_path / "w.lwt") == 0
    assert read_tensor(tmp_path / "w.lwt").tobytes() == raw.tobytes()
    assert run("std-stats", tmp_path / "w.lwt") == 0
    assert "ratio" in capsys.readouterr().out
    assert run("import-raw", tmp_path / "w.bin", "--shape", "5x8", "-o", tmp_path / "x.lwt") == 1


def test_exit_codes(workdir, capsys):
    d = workdir
    run("fit-maps", d / "b.lwt", "-o", d / "maps.json")
    assert run("assign", d / "maps.json", "--bpp", 0.5, "-o", d / "x.json") == 3
    assert "minimum achievable bpp" in capsys.readouterr().err
    assert run("inspect", d / "missing.lwqc") == 1
    (d / "bad.lwqc").write_bytes(b"LWQC" + b"\x00" * 20)
    assert run("inspect", d / "bad.lwqc") == 1
