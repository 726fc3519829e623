"""Plot rendering for channel-flow control artifacts.

Consumes only the documented CSV/JSON schemas emitted by the solver CLI
(bifurcation.csv, spectra.csv, slice_*.csv, rom_errors.csv,
rom_errors_mu.csv, manifest.json, diagnostics.json); never touches binary
archives. Rendering is read-only and embeds the source path and config hash
into the image metadata and caption.
"""

__version__ = "0.1.0"
