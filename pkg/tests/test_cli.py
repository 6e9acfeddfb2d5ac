"""End-to-end checks of the command-line interface.

Every test drives ``symfill.cli.main`` directly with an argv list and a
tmp_path workspace, which exercises the same code path as the installed
console script without spawning subprocesses.
"""

import csv

import numpy as np
import pytest

import _phantoms
from symfill import cli, core, featnet, maskgen, metrics


def _write_case(tmp_path, *, h=64, w=64, img_seed=100, mask_seed=500,
                coverage=0.15, net_seed=11, channels=(8, 16), pools=1):
    """Write truth.png, mask.png and net.sfw1; return their paths plus arrays."""
    truth = _phantoms.quasi_symmetric_phantom(img_seed, h, w)
    params = maskgen.MaskGenParams(seed=mask_seed, coverage=coverage,
                                   brush_radius_range=(2, 5))
    mask = maskgen.random_irregular_mask(h, w, params)
    net = featnet.small_random_network(seed=net_seed, in_channels=1,
                                       channels=channels, pools=pools)
    paths = {
        "truth": tmp_path / "truth.png",
        "mask": tmp_path / "mask.png",
        "net": tmp_path / "net.sfw1",
    }
    core.write_png_gray(paths["truth"], truth, bitdepth=16)
    core.write_mask_png(paths["mask"], mask)
    featnet.write_network(paths["net"], net)
    return paths, truth, mask


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# inpaint
# ---------------------------------------------------------------------------

def test_inpaint_smoke_writes_artifacts_and_preserves_context(tmp_path):
    paths, _, mask = _write_case(tmp_path)
    out = tmp_path / "out"
    rc = cli.main([
        "inpaint", "--input", str(paths["truth"]), "--mask", str(paths["mask"]),
        "--weights", str(paths["net"]), "--output-dir", str(out),
        "--step-size", "0.5", "--max-iters", "40",
    ])
    assert rc == 0
    for name in ("coarse.png", "inpainted.png", "energy.csv"):
        assert (out / name).is_file()

    # context pixels survive the whole pipeline and the 16-bit PNG round trip
    truth_rt = core.read_image_any(paths["truth"])
    final = core.read_image_any(out / "inpainted.png")
    ctx = ~mask
    assert np.array_equal(final[ctx], truth_rt[ctx])
    assert not np.array_equal(final[mask], truth_rt[mask])

    rows = _read_csv(out / "energy.csv")
    assert rows[0] == ["iter", "total", "perceptual", "sym"]
    assert len(rows) >= 3
    assert [r[0] for r in rows[1:]] == [str(i) for i in range(len(rows) - 1)]
    totals = [float(r[1]) for r in rows[1:]]
    assert min(totals) <= totals[0]


def test_inpaint_missing_weights_exits_2(tmp_path, capsys):
    paths, _, _ = _write_case(tmp_path, h=32, w=32)
    rc = cli.main([
        "inpaint", "--input", str(paths["truth"]), "--mask", str(paths["mask"]),
        "--weights", str(tmp_path / "nope.sfw1"),
        "--output-dir", str(tmp_path / "out"),
    ])
    assert rc == 2
    assert "weights not found" in capsys.readouterr().err


def test_inpaint_skip_refine_outputs_coarse_only(tmp_path):
    paths, _, _ = _write_case(tmp_path, h=32, w=32)
    out = tmp_path / "out"
    rc = cli.main([
        "inpaint", "--input", str(paths["truth"]), "--mask", str(paths["mask"]),
        "--output-dir", str(out), "--skip-refine",
    ])
    assert rc == 0
    assert (out / "inpainted.png").read_bytes() == (out / "coarse.png").read_bytes()
    rows = _read_csv(out / "energy.csv")
    assert rows == [["iter", "total", "perceptual", "sym"]]


def test_inpaint_dump_features_writes_tensors(tmp_path):
    paths, _, _ = _write_case(tmp_path, h=32, w=32, channels=(4, 8))
    out = tmp_path / "out"
    rc = cli.main([
        "inpaint", "--input", str(paths["truth"]), "--mask", str(paths["mask"]),
        "--weights", str(paths["net"]), "--output-dir", str(out),
        "--max-iters", "3", "--dump-features",
    ])
    assert rc == 0
    f1 = core.read_tensor(out / "f1.sft1")
    f1s = core.read_tensor(out / "f1_swapped.sft1")
    assert f1.shape == f1s.shape == (8, 16, 16)
    assert not np.array_equal(f1, f1s)


def test_cli_outputs_bit_identical_across_runs(tmp_path):
    """Same config, fresh process state: artifacts match byte for byte."""
    paths, _, _ = _write_case(tmp_path, h=48, w=48)
    argv_tail = [
        "--input", str(paths["truth"]), "--mask", str(paths["mask"]),
        "--weights", str(paths["net"]), "--step-size", "0.5",
        "--max-iters", "25",
    ]
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["inpaint", *argv_tail, "--output-dir", str(out)]) == 0
        outs.append(out)
    for artifact in ("coarse.png", "inpainted.png", "energy.csv"):
        assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_metrics_identical_files(tmp_path, capsys):
    paths, _, _ = _write_case(tmp_path, h=32, w=32)
    out_csv = tmp_path / "rows.csv"
    rc = cli.main([
        "metrics", "--image-a", str(paths["truth"]), "--image-b",
        str(paths["truth"]), "--mask", str(paths["mask"]),
        "--csv", str(out_csv), "--label", "same", "--method", "identity",
    ])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "psnr_db: inf" in stdout
    assert "perceptual: n/a" in stdout  # no --weights given

    rows = _read_csv(out_csv)
    assert rows[0] == ["image", "method", *metrics.REPORT_FIELDS]
    row = dict(zip(rows[0], rows[1]))
    assert row["image"] == "same" and row["method"] == "identity"
    assert float(row["mean_l1_hole"]) == 0.0
    assert float(row["ssim"]) == 1.0
    assert row["psnr_db"] == "inf"
    assert row["perceptual"] == ""


def test_metrics_with_net_fills_perceptual_column(tmp_path):
    paths, _, _ = _write_case(tmp_path, h=32, w=32)
    other = tmp_path / "other.png"
    core.write_png_gray(other, _phantoms.quasi_symmetric_phantom(7, 32, 32),
                        bitdepth=16)
    out_csv = tmp_path / "rows.csv"
    rc = cli.main([
        "metrics", "--image-a", str(paths["truth"]), "--image-b", str(other),
        "--weights", str(paths["net"]), "--csv", str(out_csv),
    ])
    assert rc == 0
    row = dict(zip(*_read_csv(out_csv)))
    assert float(row["perceptual"]) > 0.0
    assert float(row["mi_nats"]) >= 0.0


def test_metrics_appends_rows(tmp_path):
    paths, _, _ = _write_case(tmp_path, h=32, w=32)
    out_csv = tmp_path / "rows.csv"
    args = ["metrics", "--image-a", str(paths["truth"]),
            "--image-b", str(paths["truth"]), "--csv", str(out_csv)]
    assert cli.main(args) == 0
    assert cli.main(args) == 0
    rows = _read_csv(out_csv)
    assert len(rows) == 3  # header + two appended rows
    assert rows[1] == rows[2]


def test_metrics_dim_mismatch_exits_1(tmp_path, capsys):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    core.write_png_gray(a, np.zeros((8, 8), dtype=np.float32))
    core.write_png_gray(b, np.zeros((8, 9), dtype=np.float32))
    rc = cli.main(["metrics", "--image-a", str(a), "--image-b", str(b)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_coarse_only_vs_full_pipeline_hole_l1(tmp_path):
    """The refinement stages must beat the plain diffusion fill on a
    quasi-symmetric phantom, measured through the CLI like a user would."""
    paths, _, _ = _write_case(tmp_path)  # frozen: phantom 100, mask 500
    common = ["--input", str(paths["truth"]), "--mask", str(paths["mask"])]
    assert cli.main(["inpaint", *common, "--output-dir",
                     str(tmp_path / "co"), "--skip-refine"]) == 0
    assert cli.main(["inpaint", *common, "--weights", str(paths["net"]),
                     "--output-dir", str(tmp_path / "full"),
                     "--step-size", "0.5", "--max-iters", "150",
                     "--stop-tol", "0"]) == 0

    out_csv = tmp_path / "table.csv"
    for method, sub in (("coarse", "co"), ("full", "full")):
        rc = cli.main([
            "metrics", "--image-a", str(paths["truth"]),
            "--image-b", str(tmp_path / sub / "inpainted.png"),
            "--mask", str(paths["mask"]), "--csv", str(out_csv),
            "--label", "phantom100", "--method", method,
        ])
        assert rc == 0
    rows = _read_csv(out_csv)
    header = rows[0]
    l1 = {r[header.index("method")]: float(r[header.index("mean_l1_hole")])
          for r in rows[1:]}
    assert l1["full"] < l1["coarse"]


# ---------------------------------------------------------------------------
# maskgen
# ---------------------------------------------------------------------------

def test_maskgen_seed_reproducible_across_invocations(tmp_path, capsys):
    argv = ["maskgen", "--height", "48", "--width", "48", "--coverage", "0.2",
            "--seed", "3"]
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    assert cli.main([*argv, "--out", str(a)]) == 0
    assert cli.main([*argv, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "hole fraction" in capsys.readouterr().out


def test_maskgen_matches_library_call(tmp_path):
    out = tmp_path / "m.png"
    assert cli.main(["maskgen", "--height", "32", "--width", "40",
                     "--coverage", "0.25", "--seed", "9", "--brush-min", "2",
                     "--brush-max", "4", "--out", str(out)]) == 0
    params = maskgen.MaskGenParams(seed=9, coverage=0.25,
                                   brush_radius_range=(2, 4))
    expected = maskgen.random_irregular_mask(32, 40, params)
    assert np.array_equal(core.read_mask_any(out), expected)


def test_maskgen_without_output_exits_2(capsys):
    rc = cli.main(["maskgen", "--height", "32", "--width", "32"])
    assert rc == 2
    assert "no output specified" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config file handling
# ---------------------------------------------------------------------------

def test_config_file_fills_gaps_but_flags_win(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# mask generator settings\n"
        "height = 32\n"
        "width = 40\n"
        "seed = 9\n"
        "coverage = 0.4\n"
        "brush-min = 2\n"
        "brush-max = 4\n"
    )
    out = tmp_path / "m.png"
    # --coverage on the command line must override the file's 0.4
    assert cli.main(["maskgen", "--config", str(cfg), "--coverage", "0.25",
                     "--out", str(out)]) == 0
    params = maskgen.MaskGenParams(seed=9, coverage=0.25,
                                   brush_radius_range=(2, 4))
    expected = maskgen.random_irregular_mask(32, 40, params)
    assert np.array_equal(core.read_mask_any(out), expected)


def test_config_file_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("heihgt = 32\n")
    rc = cli.main(["maskgen", "--config", str(cfg), "--out",
                   str(tmp_path / "m.png")])
    assert rc == 2
    assert "unknown config keys: heihgt" in capsys.readouterr().err


def test_config_file_malformed_line_exits_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("height 32\n")
    rc = cli.main(["maskgen", "--config", str(cfg), "--out",
                   str(tmp_path / "m.png")])
    assert rc == 2
    assert "expected key = value" in capsys.readouterr().err


def test_config_file_missing_exits_2(tmp_path, capsys):
    rc = cli.main(["maskgen", "--config", str(tmp_path / "none.cfg"),
                   "--out", str(tmp_path / "m.png")])
    assert rc == 2
    assert "config file not found" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

def test_register_single_mode_writes_field_and_csv(tmp_path):
    atlas = _phantoms.head_atlas()
    patient = _phantoms.smooth_warp(atlas, seed=200, amp=3.0)
    ap, pp = tmp_path / "atlas.png", tmp_path / "patient.png"
    core.write_png_gray(ap, atlas, bitdepth=16)
    core.write_png_gray(pp, patient, bitdepth=16)

    field_path = tmp_path / "field.sft1"
    csv_path = tmp_path / "mi.csv"
    rc = cli.main([
        "register", "--atlas", str(ap), "--patient", str(pp),
        "--iterations", "60", "--sigma", "2.0", "--levels", "3",
        "--label", "warp200", "--out-field", str(field_path),
        "--out-csv", str(csv_path),
    ])
    assert rc == 0
    field = core.read_tensor(field_path)
    assert field.shape == (2,) + atlas.shape

    rows = _read_csv(csv_path)
    assert rows[0] == ["case", "mi_before", "mi_after"]
    assert rows[1][0] == "warp200"
    assert float(rows[1][2]) > float(rows[1][1])


def test_register_comparison_identical_inpainted_gives_zero_gain(tmp_path):
    # inpainted == patient makes both arms of the comparison the same run
    atlas = _phantoms.head_atlas()
    patient = _phantoms.smooth_warp(atlas, seed=201, amp=3.0)
    ap, pp = tmp_path / "atlas.png", tmp_path / "patient.png"
    core.write_png_gray(ap, atlas, bitdepth=16)
    core.write_png_gray(pp, patient, bitdepth=16)

    csv_path = tmp_path / "cmp.csv"
    rc = cli.main([
        "register", "--atlas", str(ap), "--patient", str(pp),
        "--inpainted", str(pp), "--iterations", "40", "--levels", "2",
        "--out-csv", str(csv_path),
    ])
    assert rc == 0
    rows = _read_csv(csv_path)
    assert rows[0] == ["case", "mi_direct", "mi_inpainted", "improvement"]
    assert rows[1][1] == rows[1][2]
    assert float(rows[1][3]) == 0.0


def test_register_missing_atlas_exits_2(tmp_path, capsys):
    rc = cli.main(["register", "--atlas", str(tmp_path / "no.png"),
                   "--patient", str(tmp_path / "also_no.png")])
    assert rc == 2
    assert "atlas not found" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# bench and weights inspect
# ---------------------------------------------------------------------------

def test_bench_writes_timing_csv(tmp_path, capsys):
    out_csv = tmp_path / "bench.csv"
    rc = cli.main(["bench", "--channels", "8", "--height", "16",
                   "--width", "16", "--hole-frac", "0.3", "--seed", "1",
                   "--out-csv", str(out_csv)])
    assert rc == 0
    assert "outputs identical: True" in capsys.readouterr().out
    rows = _read_csv(out_csv)
    assert rows[0] == ["stage", "value"]
    stages = {r[0]: r[1] for r in rows[1:]}
    assert set(stages) == {"swap_fast", "swap_naive", "swap_speedup",
                           "outputs_identical"}
    assert stages["outputs_identical"] == "true"
    assert float(stages["swap_fast"]) >= 0.0


def test_weights_inspect_lists_layers(tmp_path, capsys):
    net = featnet.small_random_network(seed=0, in_channels=1,
                                       channels=(4, 8), pools=1)
    path = tmp_path / "net.sfw1"
    featnet.write_network(path, net)
    rc = cli.main(["weights", "inspect", str(path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "conv" in out and "maxpool" in out
    assert "total parameters:" in out


def test_weights_inspect_missing_file_exits_2(tmp_path, capsys):
    rc = cli.main(["weights", "inspect", str(tmp_path / "no.sfw1")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_corrupt_weights_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.sfw1"
    bad.write_bytes(b"SFW1" + b"\x00" * 4)
    rc = cli.main(["weights", "inspect", str(bad)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
