"""Service taxonomy: the two-level class hierarchy and its ordering rules.

Level 1 splits traffic by latency requirement:

    CG   cloud gaming        (< 50 ms needed)
    RT   real-time           (50-200 ms tolerable)
    NRT  non-real-time       (< 500 ms preferable)

Level 2 refines RT and NRT:

    RT  -> MG (online mobile gaming), VC (VOIP video call), AC (VOIP audio call)
    NRT -> FD (file downloading / transferring), VS (video streaming and others)

CG has no sub-class. Class tuples are ordered most latency-sensitive first;
that order doubles as the tie-break priority for majority voting and fixes
the index layout of probability vectors and the multi-label output.
"""

from __future__ import annotations

L1_CLASSES: tuple[str, ...] = ("CG", "RT", "NRT")
L2_RT_CLASSES: tuple[str, ...] = ("MG", "VC", "AC")
L2_NRT_CLASSES: tuple[str, ...] = ("FD", "VS")

# Parent L1 class for every sub-class.
SUBCLASS_PARENT: dict[str, str] = {
    "MG": "RT",
    "VC": "RT",
    "AC": "RT",
    "FD": "NRT",
    "VS": "NRT",
}

# Layer names used in model metadata, CLI arguments and report files.
LAYER_L1 = "l1"
LAYER_L2_RT = "l2_rt"
LAYER_L2_NRT = "l2_nrt"

LAYER_CLASS_ORDER: dict[str, tuple[str, ...]] = {
    LAYER_L1: L1_CLASSES,
    LAYER_L2_RT: L2_RT_CLASSES,
    LAYER_L2_NRT: L2_NRT_CLASSES,
}


def is_legal_pair(l1: str, sub: str | None) -> bool:
    """True when ``sub`` may appear under ``l1`` (CG never carries a sub-class)."""
    if l1 not in L1_CLASSES:
        return False
    if sub is None:
        return True
    return SUBCLASS_PARENT.get(sub) == l1


def subclasses_of(l1: str) -> tuple[str, ...]:
    if l1 == "RT":
        return L2_RT_CLASSES
    if l1 == "NRT":
        return L2_NRT_CLASSES
    return ()
