"""Spatiotemporal reflectance fusion with a conditional GAN."""

from .raster import BAND_ORDER, BandSet, InvalidInputError, Raster, bilinear_resample

__version__ = "0.1.0"
