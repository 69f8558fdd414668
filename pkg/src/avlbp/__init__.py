"""Artery/vein classification of retinal vessel segments with multiscale
rotation-invariant local binary patterns."""

__version__ = "0.1.0"
