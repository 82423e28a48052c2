"""Event selection and temporal placement for one 10 s mixture."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import EventRecipe

CLIP_DUR = 10.0
MAX_CONCURRENT = 3
MAX_ATTEMPTS = 1000
SFX_WEIGHT = 0.8
SPLIT_PROB = 0.1
REPEAT_PROB = 0.1
MIN_SPLIT_PIECE = 0.5
GAIN_LO, GAIN_HI = 6.0, 30.0


class PlacementError(RuntimeError):
    """Raised when no onset assignment satisfies the concurrency cap."""


@dataclass
class PlacedPiece:
    onset: float      # seconds into the clip
    src_start: float  # seconds into the event waveform
    dur: float


@dataclass
class PlacedEvent:
    recipe_name: str
    kind: str
    caption: str
    source_group: str
    gain_db: float
    duration: float   # event waveform length to synthesize
    split: bool
    repeats: int
    pieces: list[PlacedPiece] = field(default_factory=list)

    def segments(self) -> list[tuple[float, float]]:
        return [(p.onset, p.onset + p.dur) for p in self.pieces]


def _max_concurrency(intervals) -> int:
    # boundary sweep; a piece ending exactly when another starts does not overlap it
    points = []
    for on, off in intervals:
        points.append((on, 1))
        points.append((off, -1))
    points.sort(key=lambda p: (p[0], p[1]))  # closes sort before opens at ties
    count = peak = 0
    for _, delta in points:
        count += delta
        peak = max(peak, count)
    return peak


def _pick_recipe(recipes: list[EventRecipe], rng: np.random.Generator) -> EventRecipe:
    groups = {r.source_group for r in recipes}
    if len(groups) == 2:
        group = "sfx" if rng.random() < SFX_WEIGHT else "general"
        pool = [r for r in recipes if r.source_group == group]
    else:
        pool = recipes
    return pool[int(rng.integers(0, len(pool)))]


def place_events(
    recipes: list[EventRecipe],
    rng: np.random.Generator,
    max_events: int = 10,
) -> list[PlacedEvent]:
    """Draw events, split/repeat structure, gains, and concurrency-safe onsets.

    The number of events is uniform on 1..max_events. Onsets are re-drawn
    wholesale until no instant carries more than three sounding pieces;
    after MAX_ATTEMPTS the caller should retry with fewer events.
    """
    if not recipes:
        raise ValueError("no event recipes to place")
    n_events = int(rng.integers(1, max_events + 1))

    events: list[PlacedEvent] = []
    piece_durs: list[list[float]] = []  # per event: durations + src offsets built below
    for _ in range(n_events):
        recipe = _pick_recipe(recipes, rng)
        caption = recipe.captions[int(rng.integers(0, len(recipe.captions)))]
        split = rng.random() < SPLIT_PROB
        m = int(rng.integers(2, 4)) if split else 1
        repeats = int(rng.integers(2, 4)) if rng.random() < REPEAT_PROB else 1
        if split:
            dur_lo = max(recipe.dur_lo, MIN_SPLIT_PIECE * m + 0.1)
            duration = float(rng.uniform(dur_lo, max(recipe.dur_hi, dur_lo)))
            spare = duration - MIN_SPLIT_PIECE * m
            lens = MIN_SPLIT_PIECE + spare * rng.dirichlet(np.ones(m))
        else:
            duration = float(rng.uniform(recipe.dur_lo, recipe.dur_hi))
            lens = np.array([duration])
        srcs = np.concatenate([[0.0], np.cumsum(lens)[:-1]])
        gain_db = float(rng.uniform(GAIN_LO, GAIN_HI))
        ev = PlacedEvent(
            recipe_name=recipe.name, kind=recipe.kind, caption=caption,
            source_group=recipe.source_group, gain_db=gain_db,
            duration=duration, split=split, repeats=repeats,
        )
        events.append(ev)
        piece_durs.append([(float(s), float(l)) for s, l in zip(srcs, lens)] * repeats)

    for _ in range(MAX_ATTEMPTS):
        intervals = []
        proposal: list[list[PlacedPiece]] = []
        for durs in piece_durs:
            pieces = []
            for src_start, dur in durs:
                onset = float(rng.uniform(0.0, CLIP_DUR - dur))
                pieces.append(PlacedPiece(onset=onset, src_start=src_start, dur=dur))
                intervals.append((onset, onset + dur))
            proposal.append(pieces)
        if _max_concurrency(intervals) <= MAX_CONCURRENT:
            for ev, pieces in zip(events, proposal):
                ev.pieces = pieces
            return events
    raise PlacementError(
        f"no placement with <= {MAX_CONCURRENT} concurrent pieces after {MAX_ATTEMPTS} attempts "
        f"({n_events} events)"
    )
