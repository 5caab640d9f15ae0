"""RGB-D two-hand mesh reconstruction with pyramid point/image feature fusion."""

__version__ = "0.1.0"
