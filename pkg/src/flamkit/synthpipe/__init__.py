"""Synthetic soundscape pipeline: catalog, placement, rendering, datasets."""

from .aweight import a_rms_db, a_weight, rms_gate, windowed_rms_db
from .catalog import BackgroundRecipe, Catalog, EventRecipe, default_catalog
from .dataset import (
    EventRecord,
    MixtureRecord,
    place_for_mixture,
    read_manifest,
    synthesize_dataset,
    synthesize_mixture,
)
from .labels import (
    rasterize_segments,
    rle_decode,
    rle_encode,
    runs,
    segments_from_curve,
    smooth_labels,
)
from .placement import PlacedEvent, PlacedPiece, PlacementError, place_events
from .render import RenderResult, render_mixture, rms_relabel
from .sounds import generate_background_audio, generate_event_audio
from .wavio import read_wav_f32, write_wav_f32

__all__ = [
    "a_rms_db", "a_weight", "rms_gate", "windowed_rms_db",
    "BackgroundRecipe", "Catalog", "EventRecipe", "default_catalog",
    "EventRecord", "MixtureRecord", "place_for_mixture", "read_manifest",
    "synthesize_dataset", "synthesize_mixture",
    "rasterize_segments", "rle_decode", "rle_encode", "runs", "segments_from_curve", "smooth_labels",
    "PlacedEvent", "PlacedPiece", "PlacementError", "place_events",
    "RenderResult", "render_mixture", "rms_relabel",
    "generate_background_audio", "generate_event_audio",
    "read_wav_f32", "write_wav_f32",
]
