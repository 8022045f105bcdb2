"""File formats, sequence loading and the synthetic scene generator."""

from .sequence import Frame, FrameRecord, SequenceManifest, iter_frames, load_frame, load_manifest, load_sequence
from .synthetic import SyntheticSceneSpec, generate_synthetic, simulate

__all__ = [
    "Frame",
    "FrameRecord",
    "SequenceManifest",
    "SyntheticSceneSpec",
    "generate_synthetic",
    "iter_frames",
    "load_frame",
    "load_manifest",
    "load_sequence",
    "simulate",
]
