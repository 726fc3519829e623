"""The five figure kinds: bifurcation, spectra, slice, error-decay, error-vs-mu."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


class SchemaError(ValueError):
    """A required CSV column is missing."""


PLOT_KINDS = ("bifurcation", "spectra", "slice", "error-decay", "error-vs-mu")

REQUIRED_COLUMNS = {
    "bifurcation": ["mu", "output", "branch_label"],
    "spectra": ["mu", "re", "im", "problem_kind", "branch_label"],
    "slice": ["x2"],
    "error-decay": ["N", "var", "avg_rel_err"],
    "error-vs-mu": ["mu", "var", "err", "err_kind"],
}

BRANCH_COLORS = ["tab:blue", "tab:orange", "tab:green", "tab:red",
                 "tab:purple", "tab:brown", "tab:olive", "tab:cyan"]


@dataclass
class PlotSpec:
    kind: str
    inputs: list                      # CSV paths
    out: str
    window: tuple | None = None       # (lo, hi) real-part limits for spectra
    diagnostics: str | None = None    # optional diagnostics JSON
    title: str | None = None

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise SchemaError(f"unknown plot kind {self.kind!r}; "
                              f"choose from {PLOT_KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")
        if self.window is not None:
            lo, hi = self.window
            if not (float(lo) < float(hi)) or not all(
                    abs(float(v)) < float("inf") for v in (lo, hi)):
                raise SchemaError("window limits must be finite and ordered")


def _read(path, kind: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing} for {kind}")
    return df


def _config_hash_near(path) -> str:
    """config hash from a manifest.json sitting next to the input CSV."""
    man = Path(path).parent / "manifest.json"
    if man.exists():
        try:
            return json.loads(man.read_text()).get("config_hash", "unknown")
        except json.JSONDecodeError:
            return "unreadable-manifest"
    return "no-manifest"


def _finish(fig, spec: PlotSpec) -> list:
    src = ", ".join(str(p) for p in spec.inputs)
    chash = _config_hash_near(spec.inputs[0])
    fig.text(0.01, 0.005, f"source: {src} | config: {chash}", fontsize=5,
             color="gray")
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta_png = {"Software": "coanda-viz", "Source": src, "ConfigHash": chash}
    written = []
    if out.suffix.lower() == ".png":
        fig.savefig(out, dpi=150, metadata=meta_png)
        written.append(out)
        svg = out.with_suffix(".svg")
        fig.savefig(svg, metadata={"Creator": f"coanda-viz config={chash}"})
        written.append(svg)
    elif out.suffix.lower() == ".svg":
        fig.savefig(out, metadata={"Creator": f"coanda-viz config={chash}"})
        written.append(out)
        png = out.with_suffix(".png")
        fig.savefig(png, dpi=150, metadata=meta_png)
        written.append(png)
    else:
        raise SchemaError(f"unsupported image format {out.suffix!r}")
    plt.close(fig)
    return written


def render(spec: PlotSpec) -> list:
    """Render one figure; returns the written image paths (PNG and SVG)."""
    fn = {"bifurcation": _bifurcation, "spectra": _spectra, "slice": _slice,
          "error-decay": _error_decay, "error-vs-mu": _error_vs_mu}[spec.kind]
    fig = fn(spec)
    return _finish(fig, spec)


def _bifurcation(spec: PlotSpec):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in spec.inputs:
        df = _read(path, "bifurcation")
        for i, (label, grp) in enumerate(df.groupby("branch_label", sort=True)):
            g = grp.sort_values("mu")
            ax.plot(g["mu"], g["output"], ".-", ms=4, lw=1,
                    color=BRANCH_COLORS[i % len(BRANCH_COLORS)], label=str(label))
    ax.set_xlabel(r"viscosity $\mu$")
    ax.set_ylabel(r"$v_{x_2}$ at the output node")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    ax.set_title(spec.title or "bifurcation diagram")
    ax.grid(alpha=0.3)
    return fig


def _spectra(spec: PlotSpec):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    lo, hi = spec.window if spec.window else (None, None)
    for path in spec.inputs:
        df = _read(path, "spectra")
        if lo is not None:
            df = df[(df["re"] >= lo) & (df["re"] <= hi)]
        for i, (label, grp) in enumerate(df.groupby(["problem_kind",
                                                     "branch_label"], sort=True)):
            ax.scatter(grp["mu"], grp["re"], s=6,
                       color=BRANCH_COLORS[i % len(BRANCH_COLORS)],
                       label=f"{label[0]}/{label[1]}", alpha=0.7)
    if spec.diagnostics:
        diag = json.loads(Path(spec.diagnostics).read_text())
        if diag.get("mu_star_star") is not None:
            ax.axvline(diag["mu_star_star"], color="k", ls="--", lw=0.8)
            ax.annotate(r"$\mu^{**}$", (diag["mu_star_star"], 0), fontsize=8)
        if diag.get("shears"):
            ax.set_title((spec.title or "eigenvalue window") + "  [shears]")
    ax.axhline(0.0, color="k", lw=0.6)
    if lo is not None:
        ax.set_ylim(lo, hi)
    ax.set_xlabel(r"viscosity $\mu$")
    ax.set_ylabel(r"$\mathrm{Re}(\sigma_\mu)$")
    if ax.get_title() == "":
        ax.set_title(spec.title or "eigenvalue window")
    ax.legend(fontsize=6, ncol=2)
    ax.grid(alpha=0.3)
    return fig


def _slice(spec: PlotSpec):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for path in spec.inputs:
        df = _read(path, "slice")
        mag_cols = [c for c in df.columns if c.endswith("_mag")]
        if not mag_cols:
            raise SchemaError(f"{path}: no *_mag velocity columns in slice CSV")
        for c in mag_cols:
            ax.plot(df["x2"], df[c], label=f"{Path(path).stem}:{c[:-4]}")
    ax.set_xlabel(r"$x_2$")
    ax.set_ylabel(r"$|v|$")
    ax.set_title(spec.title or "velocity slice")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return fig


def _error_decay(spec: PlotSpec):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for path in spec.inputs:
        df = _read(path, "error-decay")
        for var, grp in df.groupby("var", sort=True):
            g = grp.sort_values("N")
            ax.semilogy(g["N"], g["avg_rel_err"], "o-", ms=4, label=str(var))
    ax.set_xlabel("reduced basis size N")
    ax.set_ylabel("average error")
    ax.set_title(spec.title or "reduced-order error decay")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3, which="both")
    return fig


def _error_vs_mu(spec: PlotSpec):
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for path in spec.inputs:
        df = _read(path, "error-vs-mu")
        for var, grp in df.groupby("var", sort=True):
            g = grp.sort_values("mu").dropna(subset=["err"])
            ax.semilogy(g["mu"], g["err"], ".-", ms=3, lw=0.8, label=str(var))
    ax.set_xlabel(r"viscosity $\mu$")
    ax.set_ylabel("error at the largest N")
    ax.set_title(spec.title or "reduced-order error vs viscosity")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3, which="both")
    return fig
