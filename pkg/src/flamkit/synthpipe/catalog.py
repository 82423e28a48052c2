"""Sound catalog: event and background recipes, JSON round trip, default set.

The default catalog is deliberately compositional. Event classes are mostly
(kind x register) pairs whose captions share vocabulary, so captions of
held-out classes are built entirely from words the training classes also use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path


@dataclass
class EventRecipe:
    name: str
    kind: str
    captions: list[str]
    f_lo: float
    f_hi: float
    dur_lo: float
    dur_hi: float
    source_group: str = "sfx"  # "sfx" | "general"
    held_out: bool = False


@dataclass
class BackgroundRecipe:
    name: str
    kind: str  # "rain" | "pink" | "brown" | "wind"
    caption: str
    held_out: bool = False


@dataclass
class Catalog:
    events: list[EventRecipe] = field(default_factory=list)
    backgrounds: list[BackgroundRecipe] = field(default_factory=list)

    def validate(self) -> None:
        if not self.backgrounds:
            raise ValueError("catalog has no backgrounds; every mixture needs one")
        if not self.events:
            raise ValueError("catalog has no event recipes")
        names = [r.name for r in self.events] + [b.name for b in self.backgrounds]
        if len(set(names)) != len(names):
            raise ValueError("catalog recipe names must be unique")
        for r in self.events:
            if r.source_group not in ("sfx", "general"):
                raise ValueError(f"{r.name}: unknown source group {r.source_group!r}")
            if not (0 < r.dur_lo <= r.dur_hi < 10.0):
                raise ValueError(f"{r.name}: event durations must sit inside (0, 10) s")
            if r.dur_hi < 1.6:
                raise ValueError(f"{r.name}: dur_hi must allow a 3-way split (>= 1.6 s)")
            if not r.captions:
                raise ValueError(f"{r.name}: needs at least one caption")
            for c in r.captions + [r.name]:
                n = len(c.split())
                if not (2 <= n <= 13):
                    raise ValueError(f"{r.name}: caption {c!r} must be 2..13 words")

    def train_events(self) -> list[EventRecipe]:
        return [r for r in self.events if not r.held_out]

    def heldout_events(self) -> list[EventRecipe]:
        return [r for r in self.events if r.held_out]

    def partition_events(self, partition: str) -> list[EventRecipe]:
        if partition == "train":
            return self.train_events()
        if partition == "heldout":
            return self.heldout_events()
        raise ValueError(f"unknown partition {partition!r}")

    def partition_backgrounds(self, partition: str) -> list[BackgroundRecipe]:
        if partition == "train":
            return [b for b in self.backgrounds if not b.held_out]
        held = [b for b in self.backgrounds if b.held_out]
        return held if held else list(self.backgrounds)

    def caption_to_class(self) -> dict[str, str]:
        """Lookup from normalized caption text to the recipe's class name."""
        table: dict[str, str] = {}
        for r in self.events:
            for c in r.captions + [r.name]:
                table[" ".join(c.lower().split())] = r.name
        return table

    def save(self, path) -> None:
        doc = {
            "events": [asdict(r) for r in self.events],
            "backgrounds": [asdict(b) for b in self.backgrounds],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @staticmethod
    def load(path) -> "Catalog":
        doc = json.loads(Path(path).read_text())
        cat = Catalog(
            events=[EventRecipe(**r) for r in doc.get("events", [])],
            backgrounds=[BackgroundRecipe(**b) for b in doc.get("backgrounds", [])],
        )
        cat.validate()
        return cat


_REGISTERS = {
    "low": (110.0, 240.0),
    "mid": (450.0, 950.0),
    "high": (1800.0, 3600.0),
}

# caption patterns per kind; {r} is the register word
_KIND_CAPTIONS = {
    "tone": [
        "a {r} steady tone hums",
        "constant {r} sine tone sounding",
        "a smooth {r} tone holds its pitch",
    ],
    "chirp_up": [
        "a {r} rising chirp sweeps upward",
        "{r} chirp gliding up in pitch",
        "a {r} tone rising quickly",
    ],
    "chirp_down": [
        "a {r} falling chirp sweeps downward",
        "{r} chirp gliding down in pitch",
        "a {r} tone falling quickly",
    ],
    "am_tone": [
        "a {r} pulsing tone beats on and off",
        "{r} tone pulsing steadily",
        "a throbbing {r} beeping tone",
    ],
    "harmonic": [
        "a rich {r} harmonic tone like an organ",
        "{r} organ chord sounding steadily",
        "layered {r} harmonic tone hums",
    ],
    "clicks": [
        "rapid {r} clicking taps",
        "a {r} click train ticking fast",
        "{r} mechanical clicking repeats",
    ],
    "noise_burst": [
        "a {r} hissing burst of noise",
        "{r} static noise hissing briefly",
        "a rough {r} noise burst",
    ],
}

_KIND_DUR = {
    "tone": (1.0, 3.0),
    "chirp_up": (0.9, 2.6),
    "chirp_down": (0.9, 2.6),
    "am_tone": (1.2, 3.2),
    "harmonic": (1.2, 3.2),
    "clicks": (1.2, 3.4),
    "noise_burst": (0.5, 1.8),
}

# Held-out (kind, register) pairs probe composition the frame features can
# plausibly express: every held-out texture occurs in training somewhere
# (gating via mid am tone, transients via low clicks, band noise via low and
# high bursts, mid up-glides via the siren's rising phase), and no register
# carries more than one held-out tonal kind, so eval clips never force a
# never-trained same-register tonal discrimination.
_HELD_OUT = {
    ("chirp_up", "mid"),
    ("am_tone", "low"),
    ("am_tone", "high"),
    ("clicks", "mid"),
    ("clicks", "high"),
    ("noise_burst", "mid"),
}

_GENERAL_KINDS = {"clicks", "noise_burst"}


def default_catalog() -> Catalog:
    events = []
    for kind in _KIND_CAPTIONS:
        for reg, (f_lo, f_hi) in _REGISTERS.items():
            dur_lo, dur_hi = _KIND_DUR[kind]
            events.append(EventRecipe(
                name=f"{reg} {kind.replace('_', ' ')}",
                kind=kind,
                captions=[pat.format(r=reg) for pat in _KIND_CAPTIONS[kind]],
                f_lo=f_lo, f_hi=f_hi,
                dur_lo=dur_lo, dur_hi=dur_hi,
                source_group="general" if kind in _GENERAL_KINDS else "sfx",
                held_out=(kind, reg) in _HELD_OUT,
            ))
    events += [
        EventRecipe(
            name="siren wail", kind="siren",
            captions=[
                "a siren wails up and down",
                "wailing siren rising and falling in pitch",
                "a siren tone sweeping up and down slowly",
            ],
            f_lo=500.0, f_hi=1100.0, dur_lo=1.6, dur_hi=4.0,
        ),
        EventRecipe(
            name="two tone alarm", kind="two_tone",
            captions=[
                "an alternating two tone alarm beeps",
                "alarm switching between two tones",
                "a two tone warning alarm repeats",
            ],
            f_lo=550.0, f_hi=1200.0, dur_lo=1.2, dur_hi=3.0,
        ),
        EventRecipe(
            name="metal bell ring", kind="bell",
            captions=[
                "a metal bell rings and decays",
                "metallic bell struck once ringing out",
                "a bright metal chime rings",
            ],
            f_lo=700.0, f_hi=1600.0, dur_lo=1.0, dur_hi=2.6,
        ),
    ]
    backgrounds = [
        BackgroundRecipe("rain ambience", "rain", "steady rain falls in the background"),
        BackgroundRecipe("room tone", "pink", "quiet room tone with a soft murmur"),
        BackgroundRecipe("wind ambience", "wind", "wind blows with a soft roar"),
        BackgroundRecipe("river rumble", "brown", "river water rushes with a deep rumble", held_out=True),
    ]
    cat = Catalog(events=events, backgrounds=backgrounds)
    cat.validate()
    return cat
