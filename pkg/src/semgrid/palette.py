"""Semantic class palette shared by the mapper, the vectorizer and the file formats.

Id 0 is reserved: it is what unobserved cells render as, and it doubles as the
"void" label a segmenter emits for anything that is not a mapped surface.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PaletteEntry:
    class_id: int
    name: str
    color: tuple[int, int, int]


DEFAULT_PALETTE = (
    PaletteEntry(0, "void", (0, 0, 0)),
    PaletteEntry(1, "road", (128, 64, 128)),
    PaletteEntry(2, "lane_marking", (255, 255, 255)),
    PaletteEntry(3, "crosswalk", (200, 128, 128)),
    PaletteEntry(4, "sidewalk", (244, 35, 232)),
    PaletteEntry(5, "curb", (196, 196, 196)),
)

VOID, ROAD, LANE_MARKING, CROSSWALK, SIDEWALK, CURB = range(6)


def palette_to_json(palette) -> list[dict]:
    return [{"id": e.class_id, "name": e.name, "color": list(e.color)} for e in palette]


def palette_from_json(items) -> tuple[PaletteEntry, ...]:
    entries = [PaletteEntry(int(d["id"]), str(d["name"]), tuple(int(c) for c in d.get("color", (0, 0, 0)))) for d in items]
    return tuple(sorted(entries, key=lambda e: e.class_id))


def class_id(palette, name: str) -> int:
    for e in palette:
        if e.name == name:
            return e.class_id
    raise KeyError(name)
