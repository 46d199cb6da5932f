"""Deterministic synthetic corpus generator.

Stands in for real collection data: themed collections, records with detail
fields, and small solid-pattern placeholder images. Identical seeds yield
identical manifests and identical image bytes.
"""

from __future__ import annotations

import io
import json
import random
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageDraw

MANIFEST_NAME = "manifest.jsonl"
IMAGES_SUBDIR = "images"


@dataclass(frozen=True)
class Theme:
    collection_name: str
    title: str
    title_de: str
    description: str
    description_de: str
    catalog_prefix: str
    fields: tuple[tuple[str, str, str], ...]  # (name, label, label_de)
    title_fields: tuple[str, ...]
    items: tuple[str, ...]
    value_pools: dict[str, tuple[str, ...]]


THEMES: tuple[Theme, ...] = (
    Theme(
        collection_name="minerals",
        title="Mineralogical Collection",
        title_de="Mineralogische Sammlung",
        description=(
            "A collection of mineral specimens and crystals gathered by "
            "generations of geologists, each mineral documented with its "
            "locality and color."
        ),
        description_de=(
            "Eine Sammlung von Mineralstufen und Kristallen, jedes Mineral "
            "mit Fundort und Farbe dokumentiert."
        ),
        catalog_prefix="MIN",
        fields=(
            ("Mineral", "Mineral", "Mineral"),
            ("Locality", "Locality", "Fundort"),
            ("Color", "Color", "Farbe"),
        ),
        title_fields=("Mineral",),
        items=(
            "Quartz",
            "Sanrománit",
            "Feldspar",
            "Calcite",
            "Pyrite",
            "Beryl",
            "Topaz",
            "Fluorite",
        ),
        value_pools={
            "Locality": ("Alps", "Harz", "Erzgebirge", "Andes", "Atlas"),
            "Color": ("colorless", "rose", "smoky", "golden", "green"),
        },
    ),
    Theme(
        collection_name="instruments",
        title="Historical Scientific Instruments",
        title_de="Historische wissenschaftliche Instrumente",
        description=(
            "An instrument collection spanning three centuries of precision "
            "measurement, from each brass astrolabe to the modern theodolite."
        ),
        description_de=(
            "Eine Instrumentensammlung aus drei Jahrhunderten der "
            "Präzisionsmessung, vom Astrolabium bis zum Theodoliten."
        ),
        catalog_prefix="INS",
        fields=(
            ("Instrument", "Instrument", "Instrument"),
            ("Maker", "Maker", "Hersteller"),
            ("Year", "Year", "Jahr"),
        ),
        title_fields=("Instrument", "Year"),
        items=(
            "Astrolabe",
            "Theodolite",
            "Sextant",
            "Microscope",
            "Barometer",
            "Chronometer",
            "Telescope",
        ),
        value_pools={
            "Maker": ("Dollond", "Breguet", "Ramsden", "Zeiss", "Troughton"),
        },
    ),
    Theme(
        collection_name="zoology",
        title="Zoological Museum",
        title_de="Zoologisches Museum",
        description=(
            "Taxidermy and skeletal specimens of the zoological museum; every "
            "animal specimen carries species and habitat information."
        ),
        description_de=(
            "Präparate und Skelette des Zoologischen Museums; jedes Tier mit "
            "Art- und Lebensraumangaben."
        ),
        catalog_prefix="ZOO",
        fields=(
            ("Species", "Species", "Art"),
            ("Habitat", "Habitat", "Lebensraum"),
        ),
        title_fields=("Species",),
        items=("Goose", "Heron", "Otter", "Lynx", "Beaver", "Raven", "Stork"),
        value_pools={
            "Habitat": ("wetlands", "forest", "river", "coast", "tundra"),
        },
    ),
)

_PALETTE = (
    (188, 96, 66),
    (66, 120, 188),
    (96, 160, 96),
    (160, 120, 180),
    (200, 170, 80),
    (90, 90, 110),
)


def _placeholder_image(rng: random.Random, size: int = 64) -> bytes:
    """Small deterministic solid-pattern PNG."""
    background = _PALETTE[rng.randrange(len(_PALETTE))]
    image = Image.new("RGB", (size, size), background)
    draw = ImageDraw.Draw(image)
    for _ in range(3):
        color = _PALETTE[rng.randrange(len(_PALETTE))]
        x0, y0 = rng.randrange(size - 16), rng.randrange(size - 16)
        w, h = rng.randrange(8, 16), rng.randrange(8, 16)
        draw.rectangle((x0, y0, x0 + w, y0 + h), fill=color)
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def _theme_for(index: int) -> tuple[Theme, str]:
    """Cycle themes; repeats get a numeric suffix on the collection name."""
    theme = THEMES[index % len(THEMES)]
    cycle = index // len(THEMES)
    name = theme.collection_name if cycle == 0 else f"{theme.collection_name}-{cycle + 1}"
    return theme, name


def generate_fixture(
    seed: int, n_collections: int, n_records: int, out_dir: Path
) -> Path:
    """Write a synthetic corpus (manifest + images) and return the manifest path.

    Records are distributed round-robin over the collections. Any collection
    receiving four or more records gets a multi-image record: its last record
    re-uses the fundus_id and catalog number of its first, with a second image.
    """
    if n_collections < 1 or n_records < n_collections:
        raise ValueError("need n_records >= n_collections >= 1")
    rng = random.Random(seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_dir = out_dir / IMAGES_SUBDIR
    image_dir.mkdir(exist_ok=True)

    lines: list[dict] = [{"kind": "manifest", "image_root": IMAGES_SUBDIR}]

    collections: list[tuple[Theme, str]] = []
    for c in range(n_collections):
        theme, name = _theme_for(c)
        collections.append((theme, name))
        lines.append(
            {
                "kind": "collection",
                "collection_name": name,
                "title": theme.title if name == theme.collection_name else f"{theme.title} {name[-1]}",
                "title_de": theme.title_de,
                "description": theme.description,
                "description_de": theme.description_de,
                "contacts": [
                    {
                        "name": f"Curator of {name}",
                        "email": f"curator-{name}@example.org",
                    }
                ],
                "title_fields": list(theme.title_fields),
                "fields": [
                    {"name": n, "label": l, "label_de": ld} for n, l, ld in theme.fields
                ],
            }
        )

    per_collection: dict[str, list[dict]] = {name: [] for _, name in collections}
    for i in range(n_records):
        theme, name = collections[i % n_collections]
        item = theme.items[(i // n_collections) % len(theme.items)]
        details: dict[str, str] = {}
        for field_name, _label, _label_de in theme.fields:
            if field_name in theme.value_pools:
                pool = theme.value_pools[field_name]
                details[field_name] = pool[rng.randrange(len(pool))]
            elif field_name == "Year":
                details[field_name] = str(1700 + rng.randrange(280))
            else:
                details[field_name] = item
        image_name = f"{name}_{i:04d}.png"
        entry = {
            "kind": "record",
            "fundus_id": i + 1,
            "title": item,
            "catalogno": f"{theme.catalog_prefix}-{i:04d}",
            "collection_name": name,
            "image_name": image_name,
            "details": details,
        }
        per_collection[name].append(entry)

    for name, entries in per_collection.items():
        if len(entries) >= 4:
            first, last = entries[0], entries[-1]
            last["fundus_id"] = first["fundus_id"]
            last["catalogno"] = first["catalogno"]
            last["title"] = first["title"]
            last["details"] = dict(first["details"])

    for name, entries in per_collection.items():
        for entry in entries:
            (image_dir / entry["image_name"]).write_bytes(_placeholder_image(rng))
            lines.append(entry)

    manifest_path = out_dir / MANIFEST_NAME
    with manifest_path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    return manifest_path
