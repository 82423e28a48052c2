"""Dataset synthesis: mixtures to WAV files plus a JSONL manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..numcore import Rng
from . import labels
from .catalog import Catalog
from .placement import PlacementError, place_events
from .render import render_mixture
from .sounds import generate_background_audio, generate_event_audio
from .wavio import write_wav_f32

SR = 48000


@dataclass
class EventRecord:
    caption: str
    segments: list[list[float]]
    activity_rle: list[int]

    def activity(self) -> np.ndarray:
        return labels.rle_decode(self.activity_rle)


@dataclass
class MixtureRecord:
    id: str
    audio: str
    sr: int
    background_caption: str
    events: list[EventRecord]
    seed: int
    norm_gain_db: float

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "audio": self.audio,
            "sr": self.sr,
            "background_caption": self.background_caption,
            "events": [
                {"caption": e.caption, "segments": e.segments, "activity_rle": e.activity_rle}
                for e in self.events
            ],
            "seed": self.seed,
            "norm_gain_db": self.norm_gain_db,
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(line: str) -> "MixtureRecord":
        doc = json.loads(line)
        return MixtureRecord(
            id=doc["id"], audio=doc["audio"], sr=doc["sr"],
            background_caption=doc["background_caption"],
            events=[EventRecord(e["caption"], e["segments"], e["activity_rle"]) for e in doc["events"]],
            seed=doc["seed"], norm_gain_db=doc["norm_gain_db"],
        )


def read_manifest(path) -> list[MixtureRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(MixtureRecord.from_json(line))
    return out


def place_for_mixture(recipes, seed: int, index: int):
    """Placement with the budget-reduction fallback: when the full draw cannot
    satisfy the concurrency cap, retry with one event fewer."""
    base = Rng(seed)
    for max_events in range(10, 0, -1):
        try:
            return place_events(recipes, base.stream(f"place/{max_events}", index), max_events=max_events)
        except PlacementError:
            continue
    raise PlacementError(f"mixture {index}: placement failed even with a single event")


def synthesize_mixture(catalog: Catalog, seed: int, index: int, partition: str = "train"):
    """Render one mixture deterministically from (seed, index).

    Returns (waveform, MixtureRecord-without-paths) where the record's audio
    field is left blank for the caller to fill in.
    """
    recipes = catalog.partition_events(partition)
    backgrounds = catalog.partition_backgrounds(partition)
    if not recipes or not backgrounds:
        raise ValueError(f"catalog has no recipes for partition {partition!r}")
    base = Rng(seed)

    placed = place_for_mixture(recipes, seed, index)

    with_audio = []
    for j, event in enumerate(placed):
        recipe = next(r for r in recipes if r.name == event.recipe_name)
        wave = generate_event_audio(recipe, event.duration, base.stream(f"audio/{j}", index))
        with_audio.append((event, wave))

    bg_rng = base.stream("bg", index)
    bg_recipe = backgrounds[int(bg_rng.integers(0, len(backgrounds)))]
    background = generate_background_audio(bg_recipe, bg_rng)

    result = render_mixture(background, with_audio)

    events = []
    for re in result.events:
        if not re.activity.any():
            continue  # gated to silence end to end; nothing audible to describe
        events.append(EventRecord(
            caption=re.placed.caption,
            segments=labels.segments_from_curve(re.activity),
            activity_rle=labels.rle_encode(re.activity),
        ))
    record = MixtureRecord(
        id=f"mix_{index:06d}", audio="", sr=SR,
        background_caption=bg_recipe.caption,
        events=events, seed=seed, norm_gain_db=result.norm_gain_db,
    )
    return result.mixture, record


def synthesize_dataset(catalog: Catalog, count: int, seed: int, out_dir,
                       partition: str = "train") -> Path:
    """Write `count` mixtures plus manifest.jsonl under out_dir. Returns the manifest path."""
    catalog.validate()
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    lines = []
    for i in range(count):
        waveform, record = synthesize_mixture(catalog, seed, i, partition)
        rel = f"wavs/{record.id}.wav"
        write_wav_f32(out / rel, waveform, SR)
        record.audio = rel
        lines.append(record.to_json())
    manifest_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    meta = {
        "count": count, "seed": seed, "partition": partition,
        "tool_version": __version__,
    }
    (out / "dataset_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return manifest_path
