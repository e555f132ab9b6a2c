"""Floor-plan synthesis toolkit: sequential room-center placement on a pixel
canvas, graph-attention room-rectangle regression, plan assembly with exact
clipping, functional-quality metrics, and an interactive HTTP service."""

__version__ = "0.1.0"

CANVAS = 256
ROOM_TYPES = ("bed", "rest", "kit", "bal")
