"""Binary retinal disease-risk screening from fundus images."""

__version__ = "0.1.0"
