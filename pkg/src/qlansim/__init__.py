"""qlansim: desk-scale simulator for a wavelength-routed entanglement LAN."""

__version__ = "0.1.0"
