import hashlib
import json
from pathlib import Path

import pytest

from coanda_viz.cli import main
from coanda_viz.plots import PlotSpec, SchemaError, render


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Synthetic artifact tree matching the solver CSV schemas."""
    root = tmp_path_factory.mktemp("artifacts")
    (root / "manifest.json").write_text(json.dumps(
        {"config": {}, "config_hash": "cafebabe12345678", "checksums": {}}))
    (root / "bifurcation.csv").write_text(
        "mu,output,J,branch_label\n"
        "2.0,0.0,,symmetric\n1.0,0.0,,symmetric\n0.5,0.0,,symmetric\n"
        "2.0,0.0,,asymmetric\n1.0,0.1,,asymmetric\n0.5,3.3,,asymmetric\n"
        "2.0,0.0,,mirrored\n1.0,-0.1,,mirrored\n0.5,-3.3,,mirrored\n")
    (root / "spectra.csv").write_text(
        "mu,re,im,problem_kind,branch_label\n"
        + "".join(f"{mu},{0.002 + (mu-1.0)**2:.6f},0.0,global,natural\n"
                  f"{mu},{-0.002 - (mu-1.0)**2:.6f},0.0,global,natural\n"
                  f"{mu},0.05,0.3,global,natural\n"
                  for mu in (2.0, 1.5, 1.0, 0.7, 0.5)))
    (root / "diagnostics.json").write_text(json.dumps(
        {"shears": True, "mu_star": 0.96, "mu_star_star": 1.0, "cluster": 0.01}))
    (root / "slice_x47.csv").write_text(
        "x2,v_vx,v_vy,v_mag\n0.0,0.0,0.0,0.0\n3.75,31.0,0.1,31.0\n7.5,0.0,0.0,0.0\n")
    (root / "rom_errors.csv").write_text(
        "N,var,avg_rel_err\n" + "".join(
            f"{n},{var},{10.0**(-1 - n/3)}\n"
            for n in (2, 4, 8, 16) for var in ("v", "p", "u", "w", "q")))
    (root / "rom_errors_mu.csv").write_text(
        "mu,var,err,err_kind\n" + "".join(
            f"{mu},v,{1e-5 + 1e-4*abs(mu-0.96):.2e},rel\n"
            for mu in (2.0, 1.5, 1.0, 0.96, 0.7, 0.5)))
    return root


def checksum_tree(root: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.iterdir()) if p.is_file()}


KIND_INPUT = {
    "bifurcation": "bifurcation.csv",
    "spectra": "spectra.csv",
    "slice": "slice_x47.csv",
    "error-decay": "rom_errors.csv",
    "error-vs-mu": "rom_errors_mu.csv",
}


@pytest.mark.parametrize("kind", sorted(KIND_INPUT))
def test_each_kind_renders_and_embeds_hash(kind, artifacts, tmp_path):
    before = checksum_tree(artifacts)
    out = tmp_path / f"{kind}.png"
    args = [kind, "--in", str(artifacts / KIND_INPUT[kind]),
            "--out", str(out)]
    if kind == "spectra":
        args += ["--window", "-0.01", "0.01",
                 "--diagnostics", str(artifacts / "diagnostics.json")]
    rc = main(args)
    assert rc == 0
    assert out.exists() and out.stat().st_size > 0
    assert out.with_suffix(".svg").exists()
    # inputs byte-identical after rendering
    assert checksum_tree(artifacts) == before
    # config hash embedded in the PNG metadata and the SVG text
    from PIL import Image
    meta = Image.open(out).info
    assert meta.get("ConfigHash") == "cafebabe12345678"
    assert "cafebabe12345678" in out.with_suffix(".svg").read_text()


def test_missing_column_names_the_column(artifacts, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("mu,real_part\n1.0,0.0\n")
    rc = main(["spectra", "--in", str(bad), "--out", str(tmp_path / "x.png")])
    assert rc == 2
    with pytest.raises(SchemaError, match="re"):
        render(PlotSpec("spectra", [str(bad)], str(tmp_path / "x.png")))


def test_empty_csv_renders_empty_axes(artifacts, tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("mu,output,J,branch_label\n")
    out = tmp_path / "empty.png"
    rc = main(["bifurcation", "--in", str(empty), "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_window_validation(tmp_path, artifacts):
    with pytest.raises(SchemaError):
        PlotSpec("spectra", [str(artifacts / "spectra.csv")],
                 str(tmp_path / "x.png"), window=(1.0, -1.0))
    with pytest.raises(SchemaError):
        PlotSpec("nonsense", [str(artifacts / "spectra.csv")],
                 str(tmp_path / "x.png"))


def test_missing_input_file(tmp_path):
    rc = main(["bifurcation", "--in", str(tmp_path / "none.csv"),
               "--out", str(tmp_path / "x.png")])
    assert rc == 2


def test_no_manifest_still_renders(tmp_path):
    csv = tmp_path / "bifurcation.csv"
    csv.write_text("mu,output,J,branch_label\n1.0,0.5,,b\n")
    out = tmp_path / "b.png"
    assert main(["bifurcation", "--in", str(csv), "--out", str(out)]) == 0
    from PIL import Image
    assert Image.open(out).info.get("ConfigHash") == "no-manifest"
