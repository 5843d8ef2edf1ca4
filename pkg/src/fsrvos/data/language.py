"""Templated referring expressions and the vocabulary they induce."""

from __future__ import annotations

from .shapes import CLASSES, COLORS, SceneSpec

PAD, UNK = "<pad>", "<unk>"
ORDINALS = ("first", "second", "third", "fourth")
COUNTS = {2: "two", 3: "three", 4: "four"}
DIRECTIONS = ("left", "right", "up", "down")
MAX_WORDS = 20


class AmbiguousTargetError(ValueError):
    """No attribute combination singles out the requested targets."""


def plural(shape: str) -> str:
    return shape + ("es" if shape.endswith(("s", "x", "ss")) else "s")


def vocabulary() -> list[str]:
    """Every word the grammar can emit, preceded by PAD (id 0) and UNK (id 1)."""
    words = ["the", "moving", *ORDINALS, *COUNTS.values(), *DIRECTIONS, *COLORS]
    for shape in CLASSES:
        words += [shape, plural(shape)]
    return [PAD, UNK, *words]


def _phrase(parts: list[str]) -> str:
    text = " ".join(parts)
    if len(parts) > MAX_WORDS:
        raise AmbiguousTargetError(f"expression exceeds {MAX_WORDS} words: {text!r}")
    return text


def generate_expression(spec: SceneSpec, targets: tuple[int, ...] | None = None,
                        mention_motion: bool = False) -> str:
    """Describe ``targets`` so that the description matches no other object.

    Single target: ``the [<ordinal>] <color> <shape> [moving <direction>]``.
    Several targets: ``the <count> <color> <shape>s``.
    """
    targets = tuple(spec.targets if targets is None else targets)
    objs = spec.objects
    first = objs[targets[0]]
    if any(objs[i].shape != first.shape or objs[i].color != first.color for i in targets):
        raise AmbiguousTargetError("targets do not share one colour and class")
    same = [i for i, o in enumerate(objs) if o.shape == first.shape and o.color == first.color]

    if len(targets) > 1:
        if sorted(same) != sorted(targets) or len(targets) not in COUNTS:
            raise AmbiguousTargetError("count template cannot isolate the targets")
        return _phrase(["the", COUNTS[len(targets)], first.color, plural(first.shape)])

    target = targets[0]
    direction = first.direction()
    motion = ["moving", direction] if direction else []
    if len(same) == 1:
        return _phrase(["the", first.color, first.shape] + (motion if mention_motion else []))

    others = [objs[i].direction() for i in same if i != target]
    if direction and direction not in others:
        return _phrase(["the", first.color, first.shape] + motion)

    xs = sorted((objs[i].start[0], i) for i in same)
    rank = [i for _, i in xs].index(target)
    starts = [x for x, _ in xs]
    if len(set(round(x, 6) for x in starts)) == len(starts) and rank < len(ORDINALS):
        return _phrase(["the", ORDINALS[rank], first.color, first.shape])
    raise AmbiguousTargetError("target indistinguishable from a same-class, same-colour object")
