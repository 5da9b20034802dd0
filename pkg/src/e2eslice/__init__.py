"""Joint RAN power control and core-network VNF placement for end-to-end slices."""

__version__ = "0.1.0"
