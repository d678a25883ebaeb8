"""SOFA (HDF5) to hrtfnp-container conversion tooling."""

__version__ = "0.1.0"
