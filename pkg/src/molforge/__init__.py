"""molforge: graph diffusion sampling, template retrosynthesis, A* route
planning, interleaved text/graph generation, and a desk-scale eval harness."""

__version__ = "0.1.0"
