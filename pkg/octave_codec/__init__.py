"""
octave-codec

Variable-rate learned image codec with multi-resolution (octave) code maps
and a lossy residual enhancement layer.
"""

__version__ = "0.1.0"
