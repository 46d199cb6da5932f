"""Prompt catalog: canonical system instructions shipped with the package.

Every LVLM-facing instruction is loaded from these files so tests can pin
their checksums and catch silent prompt drift.
"""

from __future__ import annotations

import hashlib
from importlib import resources

AGENT_SYSTEM = "agent_system"
REWRITE_TEXT_TO_IMAGE = "rewrite_text_to_image"
REWRITE_TEXT_TO_TEXT = "rewrite_text_to_text"
IMAGE_VQA = "image_vqa"
IMAGE_CAPTION = "image_caption"
IMAGE_OCR = "image_ocr"
IMAGE_OBJECT_DETECTION = "image_object_detection"

CATALOG = (
    AGENT_SYSTEM,
    REWRITE_TEXT_TO_IMAGE,
    REWRITE_TEXT_TO_TEXT,
    IMAGE_VQA,
    IMAGE_CAPTION,
    IMAGE_OCR,
    IMAGE_OBJECT_DETECTION,
)


def load_prompt(name: str) -> str:
    if name not in CATALOG:
        raise KeyError(f"unknown prompt {name!r}")
    return (
        resources.files("fundusx").joinpath("prompts").joinpath(f"{name}.md").read_text("utf-8")
    )


def prompt_sha256(name: str) -> str:
    return hashlib.sha256(load_prompt(name).encode("utf-8")).hexdigest()
