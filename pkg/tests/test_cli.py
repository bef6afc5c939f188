import argparse
import json
import os

import numpy as np
import pytest
from PIL import Image

from texswap import cli, container
from texswap import config as cfgmod
from texswap import dataset as ds


# ---------------------------------------------------------------------------
# config namespace: parsing, layering, provenance


def test_defaults_cover_every_key(monkeypatch):
    monkeypatch.delenv("TEXSWAP_SEED", raising=False)
    rc = cfgmod.load_config()
    assert rc.seed == 0
    assert rc.gamma == 3.0
    assert rc.stage_res == (32, 64)
    assert rc.stratified is True
    vals = rc.as_dict()
    for key, default, _ in cfgmod.DEFAULTS:
        assert vals[key] == default
        assert rc.provenance(key) == "default"


def test_env_seed_layer(monkeypatch):
    monkeypatch.setenv("TEXSWAP_SEED", "77")
    rc = cfgmod.load_config()
    assert rc.seed == 77
    assert rc.provenance("seed") == "env"
    # only the seed listens to the environment
    assert rc.provenance("gamma") == "default"


def test_env_seed_must_be_int(monkeypatch):
    monkeypatch.setenv("TEXSWAP_SEED", "lots")
    with pytest.raises(cfgmod.ConfigError, match="expects int"):
        cfgmod.load_config()


def test_file_then_cli_layering(tmp_path, monkeypatch):
    monkeypatch.setenv("TEXSWAP_SEED", "77")
    p = tmp_path / "run.cfg"
    p.write_text(
        "# comment line\n"
        "\n"
        "seed=5\n"
        "gamma = 1.5  # trailing comment\n"
        "mults=1,2\n"
    )
    rc = cfgmod.load_config(str(p), {"gamma": "2.0", "batch": "4"})
    assert rc.seed == 5 and rc.provenance("seed") == "file"
    assert rc.gamma == 2.0 and rc.provenance("gamma") == "cli"
    assert rc.batch == 4 and rc.provenance("batch") == "cli"
    assert rc.mults == (1, 2)
    assert rc.provenance("res") == "default"


def test_file_rejects_bare_line(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed=1\nnot a pair\n")
    with pytest.raises(cfgmod.ConfigError, match=":2:"):
        cfgmod.load_config(str(p))


def test_dump_roundtrip(tmp_path, monkeypatch):
    monkeypatch.delenv("TEXSWAP_SEED", raising=False)
    src = tmp_path / "in.cfg"
    src.write_text("seed=9\nstage_res=16,32\nlr=0.0005\nstratified=no\n")
    rc = cfgmod.load_config(str(src), {"gamma": "0.5"})
    out = tmp_path / "dump.cfg"
    rc.dump(str(out))
    back = cfgmod.load_config(str(out))
    assert back.as_dict() == rc.as_dict()
    # every key is spelled out, so the reload is file-sourced throughout
    assert back.provenance("seed") == "file"
    assert back.provenance("batch") == "file"


def test_parse_value_tuples_bools_floats():
    assert cfgmod.parse_value("mults", "1, 2,4") == (1, 2, 4)
    assert cfgmod.parse_value("stage_res", "64") == (64,)
    assert cfgmod.parse_value("stratified", "false") is False
    assert cfgmod.parse_value("stratified", "YES") is True
    assert cfgmod.parse_value("lr", "1e-3") == pytest.approx(1e-3)
    assert cfgmod.parse_value("steps", " 25 ") == 25


def test_parse_value_type_errors():
    with pytest.raises(cfgmod.ConfigError, match="expects int"):
        cfgmod.parse_value("batch", "4.5")
    with pytest.raises(cfgmod.ConfigError, match="expects bool"):
        cfgmod.parse_value("stratified", "2")
    with pytest.raises(cfgmod.ConfigError, match="expects int"):
        cfgmod.parse_value("mults", "1,x")


def test_unknown_key_suggests_nearest():
    with pytest.raises(cfgmod.ConfigError, match="nearest valid key is 'stage_res'"):
        cfgmod.parse_value("stage_rez", "32")
    # nothing close: no suggestion appended
    with pytest.raises(cfgmod.ConfigError) as ei:
        cfgmod.parse_value("zzqqxx", "1")
    assert "nearest" not in str(ei.value)


def test_config_bridges(monkeypatch):
    monkeypatch.delenv("TEXSWAP_SEED", raising=False)
    rc = cfgmod.load_config(None, {"base": "8", "mults": "1,2", "seed": "3",
                                   "intr_res": "16", "stage_steps": "2"})
    mc = cfgmod.model_config(rc)
    assert mc.base == 8 and mc.mults == (1, 2)
    tc = cfgmod.train_config(rc)
    assert tc.seed == 3 and tc.stage_steps == (2,) and tc.model.base == 8
    ic = cfgmod.intrinsics_config(rc)
    assert ic.res == 16 and ic.seed == 3
    sc = cfgmod.sampler_config(rc)
    assert sc.gamma == 3.0 and sc.seed == 3
    dc = cfgmod.data_config(rc)
    assert dc.seed0 == 3


# ---------------------------------------------------------------------------
# argument plumbing


def test_load_rc_set_parsing_and_dump(tmp_path):
    ns = argparse.Namespace(set=["batch = 4", "mults=1, 2"], config=None,
                            seed=None, out=str(tmp_path / "o"))
    rc = cli._load_rc(ns)
    assert rc.batch == 4
    assert rc.mults == (1, 2)
    assert rc.provenance("batch") == "cli"
    dumped = os.path.join(str(tmp_path / "o"), "run_config.txt")
    assert os.path.exists(dumped)
    assert cfgmod.load_config(dumped).batch == 4


def test_load_rc_flag_overrides_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed=5\nsteps=40\n")
    ns = argparse.Namespace(set=[], config=str(p), seed=9, steps=7,
                            out=str(tmp_path / "o"))
    rc = cli._load_rc(ns)
    assert rc.seed == 9 and rc.provenance("seed") == "cli"
    assert rc.steps == 7 and rc.provenance("steps") == "cli"


def test_set_requires_key_value(tmp_path, capsys):
    code = cli.cli_main(["gen", "--out", str(tmp_path), "--set", "spp"])
    assert code == 1
    assert "--set expects KEY=VALUE" in capsys.readouterr().err


def test_misspelled_key_reports_nearest(tmp_path, capsys):
    code = cli.cli_main(["gen", "--out", str(tmp_path), "--set", "sppp=4"])
    assert code == 1
    err = capsys.readouterr().err
    assert "error:" in err
    assert "nearest valid key is 'spp'" in err


def test_unknown_subcommand_exits_2(capsys):
    assert cli.cli_main(["frobnicate"]) == 2
    assert cli.cli_main([]) == 2
    capsys.readouterr()


# ---------------------------------------------------------------------------
# subcommands


def test_selftest_passes(tmp_path, capsys):
    code = cli.cli_main(["selftest", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 4
    assert "FAIL" not in out


def test_gen_counts_and_reproduces(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("TEXSWAP_SEED", raising=False)
    out = str(tmp_path / "data")
    code = cli.cli_main(["gen", "--out", out, "--scenes", "1",
                         "--variations", "1", "--seed", "50",
                         "--set", "res=32", "--set", "spp=4",
                         "--set", "exemplar_res=32"])
    assert code == 0
    assert "manifest:" in capsys.readouterr().out

    man = json.load(open(os.path.join(out, "manifest.json")))
    assert len(man["entries"]) == 1
    entry = man["entries"][0]
    assert entry["scene_seed"] == 50
    for rel in entry["paths"].values():
        assert os.path.exists(os.path.join(out, rel))
    recs = ds.load_pairs(os.path.join(out, "manifest.json"))
    assert len(recs) == 1
    assert recs[0].buffers_a.I.shape == (32, 32, 3)

    # the dumped effective config names both flag- and --set-sourced keys
    dump = open(os.path.join(out, "run_config.txt")).read()
    assert "scenes=1" in dump and "spp=4" in dump
    rc = cfgmod.load_config(os.path.join(out, "run_config.txt"))
    assert rc.scenes == 1 and rc.spp == 4 and rc.seed == 50

    # feeding the dump back regenerates the identical dataset
    out2 = str(tmp_path / "again")
    code = cli.cli_main(["gen", "--out", out2,
                         "--config", os.path.join(out, "run_config.txt")])
    assert code == 0
    capsys.readouterr()
    man2 = json.load(open(os.path.join(out2, "manifest.json")))
    assert man2["entries"] == man["entries"]
    a = container.read_tensors(os.path.join(out, entry["paths"]["a_buffers"]))
    b = container.read_tensors(os.path.join(out2, entry["paths"]["a_buffers"]))
    for k in a:
        assert np.array_equal(a[k], b[k]), k


TINY_MODEL_FLAGS = [
    "--set", "base=8", "--set", "mults=1,2", "--set", "attn_levels=1",
    "--set", "tok_dim=16", "--set", "n_tokens=4", "--set", "enc_res=16",
    "--set", "tex_base=8",
]


@pytest.fixture(scope="module")
def cli_ckpt(tmp_path_factory, tiny_manifest):
    """2-step training run driven through the CLI; returns the checkpoint."""
    out = str(tmp_path_factory.mktemp("cli_train"))
    code = cli.cli_main(["train", "--out", out, "--manifest", tiny_manifest,
                         "--set", "stage_res=16", "--set", "stage_steps=2",
                         "--set", "batch=2", "--set", "ckpt_every=2"]
                        + TINY_MODEL_FLAGS)
    assert code == 0
    path = os.path.join(out, "ckpt_final.mswp")
    assert os.path.exists(path)
    assert os.path.exists(os.path.join(out, "run_config.txt"))
    assert os.path.exists(os.path.join(out, "loss.csv"))
    return path


def test_cli_swap_writes_outputs(tmp_path, tiny_manifest, cli_ckpt, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    out = str(tmp_path / "swap")
    code = cli.cli_main(["swap", "--out", out, "--manifest", tiny_manifest,
                         "--pair", pid, "--ckpt", cli_ckpt,
                         "--steps", "2", "--gamma", "1.0"])
    assert code == 0
    capsys.readouterr()
    for name in ("swap.png", "input.png", "target.png", "swap.mswp"):
        assert os.path.exists(os.path.join(out, name)), name
    i_hat = container.read_tensors(os.path.join(out, "swap.mswp"))["I_hat"]
    assert i_hat.shape == (32, 32, 3)
    assert i_hat.dtype == np.float32
    assert i_hat.min() >= 0.0 and i_hat.max() <= 1.0


def test_cli_swap_scale_override(tmp_path, tiny_manifest, cli_ckpt,
                                 monkeypatch, capsys):
    rec = ds.load_pairs(tiny_manifest)[0]
    seen = []
    real = cli.sampling.swap

    def spy(x, M, p_full, s, offset, gamma, params, **kw):
        seen.append((s, offset))
        return real(x, M, p_full, s, offset, gamma, params, **kw)

    monkeypatch.setattr(cli.sampling, "swap", spy)
    base = ["swap", "--manifest", tiny_manifest, "--pair", rec.pair_id,
            "--ckpt", cli_ckpt, "--steps", "1", "--gamma", "1.0"]
    assert cli.cli_main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli.cli_main(base + ["--out", str(tmp_path / "b"),
                                "--set", "scale_u=4.0",
                                "--set", "scale_v=4.0",
                                "--set", "offset_u=0.25"]) == 0
    capsys.readouterr()
    # default: the manifest's uv scale travels through untouched
    assert seen[0][0] == tuple(rec.scale)
    assert seen[0][1] == (0.0, 0.0)
    # explicit keys replace the manifest scale and shift the crop
    assert seen[1][0] == (4.0, 4.0)
    assert seen[1][1] == (0.25, 0.0)


def test_cli_swap_direction_ba(tmp_path, tiny_manifest, cli_ckpt, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    out = str(tmp_path / "swap_ba")
    code = cli.cli_main(["swap", "--out", out, "--manifest", tiny_manifest,
                         "--pair", pid, "--direction", "ba", "--ckpt", cli_ckpt,
                         "--steps", "2", "--gamma", "1.0"])
    assert code == 0
    capsys.readouterr()
    rec = ds.load_pairs(tiny_manifest)[0]
    inp = np.asarray(Image.open(os.path.join(out, "input.png")))
    # direction ba starts from member b
    from texswap.imaging import to_uint8
    assert np.array_equal(inp, to_uint8(rec.buffers_b.I))


def test_cli_swap_missing_pair(tmp_path, tiny_manifest, cli_ckpt, capsys):
    code = cli.cli_main(["swap", "--out", str(tmp_path), "--manifest",
                         tiny_manifest, "--pair", "nope", "--ckpt", cli_ckpt])
    assert code == 1
    assert "not in manifest" in capsys.readouterr().err


def test_cli_swap_missing_ckpt(tmp_path, tiny_manifest, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    code = cli.cli_main(["swap", "--out", str(tmp_path), "--manifest",
                         tiny_manifest, "--pair", pid,
                         "--ckpt", str(tmp_path / "absent.mswp")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_eval_report(tmp_path, tiny_manifest, cli_ckpt, capsys):
    out = str(tmp_path / "eval")
    code = cli.cli_main(["eval", "--out", out, "--manifest", tiny_manifest,
                         "--ckpt", cli_ckpt, "--steps", "2", "--gamma", "1.0",
                         "--set", "eval_max_pairs=1"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "[gt]" in printed and "psnr_masked" in printed
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["n_pairs"] == 1
    assert all(r["path"] == "gt" for r in report["records"])
    assert os.path.exists(os.path.join(out, "contact_sheet.png"))


def test_cli_plot_grid(tmp_path, tiny_manifest, cli_ckpt, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    out = str(tmp_path / "plot")
    code = cli.cli_main(["plot", "--out", out, "--manifest", tiny_manifest,
                         "--pair", pid, "--ckpt", cli_ckpt,
                         "--gammas", "0,1", "--steps", "2"])
    assert code == 0
    capsys.readouterr()
    img = Image.open(os.path.join(out, "gamma_sweep.png"))
    # input + two guidance strengths + target, side by side at 32 px
    assert img.size == (4 * 32, 32)


def test_cli_plot_empty_gammas(tmp_path, tiny_manifest, cli_ckpt, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    code = cli.cli_main(["plot", "--out", str(tmp_path), "--manifest",
                         tiny_manifest, "--pair", pid, "--ckpt", cli_ckpt,
                         "--gammas", ","])
    assert code == 1
    assert "--gammas is empty" in capsys.readouterr().err


@pytest.fixture(scope="module")
def cli_intr_ckpt(tmp_path_factory, tiny_manifest):
    out = str(tmp_path_factory.mktemp("cli_intr"))
    code = cli.cli_main(["train-intrinsics", "--out", out,
                         "--manifest", tiny_manifest,
                         "--set", "intr_base=8", "--set", "intr_steps=2",
                         "--set", "intr_batch=2", "--set", "intr_res=16",
                         "--set", "intr_ckpt_every=2"])
    assert code == 0
    path = os.path.join(out, "intr_final.mswp")
    assert os.path.exists(path)
    return path


def test_cli_estimate_outputs(tmp_path, tiny_manifest, cli_intr_ckpt, capsys):
    pid = ds.load_pairs(tiny_manifest)[0].pair_id
    out = str(tmp_path / "est")
    code = cli.cli_main(["estimate", "--out", out, "--manifest", tiny_manifest,
                         "--pair", pid, "--member", "b",
                         "--intrinsics", cli_intr_ckpt])
    assert code == 0
    capsys.readouterr()
    for name in ("normals.png", "irradiance.png", "estimates.mswp"):
        assert os.path.exists(os.path.join(out, name)), name
    est = container.read_tensors(os.path.join(out, "estimates.mswp"))
    assert est["N_hat"].shape == (32, 32, 3)
    assert est["E_hat"].shape == (32, 32, 1)
    norms = np.linalg.norm(est["N_hat"], axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-4)
    assert est["E_hat"].min() >= 0.0
