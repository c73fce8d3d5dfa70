"""Resolved-sideband cooling of a levitated nanoparticle with laser phase noise."""

__version__ = "0.1.0"
