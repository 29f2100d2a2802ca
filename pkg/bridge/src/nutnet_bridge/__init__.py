"""HTTP detector bridge: wraps a pretrained object detector behind a
minimal ``POST /detect`` / ``GET /health`` protocol so the defense
pipeline can run end to end without embedding a deep-learning runtime.
"""

__version__ = "0.1.0"

BRIDGE_PROTOCOL_VERSION = "1"
