"""Versioned checkpoint blobs with embedded config and training metadata."""

from __future__ import annotations

from pathlib import Path

import torch

VERSION = 1


class CheckpointError(ValueError):
    pass


def save_payload(
    path: str | Path, kind: str, config: dict, training_meta: dict, state: dict
) -> None:
    torch.save(
        {
            "format": kind,
            "version": VERSION,
            "config": config,
            "training_meta": training_meta,
            "state": state,
        },
        str(path),
    )


def load_payload(path: str | Path, kind: str | None = None) -> dict:
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format" not in payload:
        raise CheckpointError(f"{path} is not an eggdetect checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')}"
        )
    if kind is not None and payload["format"] != kind:
        raise CheckpointError(
            f"{path}: expected a {kind} checkpoint, found {payload['format']}"
        )
    return payload


def read_info(path: str | Path) -> dict:
    """Metadata only (no weights), for the model-info CLI verb."""
    payload = load_payload(path)
    return {
        "format": payload["format"],
        "version": payload["version"],
        "config": payload["config"],
        "training_meta": payload["training_meta"],
    }
