"""Cross-scale spatiotemporal EEG encoder with structured sparse attention.

The package is organized around a small differentiable numeric core
(`autodiff`), signal standardization (`dsp`, `montage`), the encoder stack
(`embed`, `cst`, `ssa`, `model`), optimization and metrics (`train`,
`metrics`), data plumbing (`data_io`), and an attention-complexity
benchmark (`bench`). `cli` exposes everything as subcommands.
"""

__version__ = "0.1.0"
