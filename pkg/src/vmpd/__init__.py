"""Variable-metric primal-dual proximal splitting with an image-restoration CLI."""

__version__ = "0.1.0"
