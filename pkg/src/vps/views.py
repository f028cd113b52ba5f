"""Compact string descriptors for how a stream views its frames.

A view is one of: ``identity`` (frames as-is), ``aug:<tag>`` (a named
label-preserving augmentation, interpreted by the backend), or
``zero:<i>,<j>,...`` (the listed frame indices are zeroed out / dropped by
the backend). Strings keep the descriptor hashable, serializable, and
directly usable as a wire field.
"""

from __future__ import annotations

from typing import Iterable

IDENTITY = "identity"


def augmented_view(tag: str) -> str:
    if not tag or ":" in tag:
        raise ValueError(f"bad augmentation tag {tag!r}")
    return f"aug:{tag}"


def zero_view(frames: Iterable[int]) -> str:
    return "zero:" + ",".join(str(int(f)) for f in frames)


def parse_view(view: str) -> tuple[str, str | tuple[int, ...]]:
    """Split a descriptor into (kind, payload).

    Returns ("identity", ""), ("aug", tag), or ("zero", frame indices).
    """
    if view == IDENTITY:
        return "identity", ""
    if view.startswith("aug:"):
        tag = view[4:]
        if not tag:
            raise ValueError("augmentation view with empty tag")
        return "aug", tag
    if view.startswith("zero:"):
        body = view[5:]
        frames = tuple(int(x) for x in body.split(",")) if body else ()
        return "zero", frames
    raise ValueError(f"unknown view descriptor {view!r}")
