"""All-in-one image restoration with variational degradation priors.

A degradation-prior VAE infers multi-scale latent cues from a corrupted
image; a dual-branch (luminance/chrominance) restoration network consumes
those cues through value-modulated attention, FFT-based degradation maps,
latent FiLM fusion, and a linear-complexity gated decoder.
"""

__version__ = "0.1.0"
