"""Catalog of loop self-scheduling techniques and the technique-set defaults
used by the benchmark harness."""

from __future__ import annotations

import enum


class TechniqueKind(enum.Enum):
    """One tag per chunk-size rule, plus the NODLB process-level baseline.

    NODLB is not a chunk rule: it denotes a one-shot equal split of the
    iteration space across ranks and is only valid at the process level.
    """

    STATIC = "STATIC"
    SS = "SS"
    FSC = "FSC"
    MFSC = "mFSC"
    GSS = "GSS"
    TSS = "TSS"
    FAC = "FAC"
    WF = "WF"
    RAND = "RAND"
    AWF = "AWF"
    AWF_B = "AWF-B"
    AWF_C = "AWF-C"
    AWF_D = "AWF-D"
    AWF_E = "AWF-E"
    AF = "AF"
    NODLB = "NODLB"

    def __str__(self) -> str:
        return self.value


# The 15 chunk rules (everything except the NODLB baseline).
CHUNK_TECHNIQUES: frozenset[TechniqueKind] = frozenset(
    t for t in TechniqueKind if t is not TechniqueKind.NODLB
)

AWF_FAMILY: frozenset[TechniqueKind] = frozenset(
    {
        TechniqueKind.AWF,
        TechniqueKind.AWF_B,
        TechniqueKind.AWF_C,
        TechniqueKind.AWF_D,
        TechniqueKind.AWF_E,
    }
)

# Adaptive rules incorporate measured per-PE performance; the rest depend
# only on N, P, R and static parameters.
ADAPTIVE_TECHNIQUES: frozenset[TechniqueKind] = AWF_FAMILY | {TechniqueKind.AF}

# WF-style rules draw a per-PE share of a FAC batch, scaled by PE weight.
WEIGHTED_TECHNIQUES: frozenset[TechniqueKind] = AWF_FAMILY | {TechniqueKind.WF}

# Scheduling overhead counts toward the weight calculation for these two.
OVERHEAD_AWARE_AWF: frozenset[TechniqueKind] = frozenset(
    {TechniqueKind.AWF_D, TechniqueKind.AWF_E}
)

# Default factorial axes: 6 thread-level x 11 process-level techniques.
DEFAULT_THREAD_TECHNIQUES: tuple[TechniqueKind, ...] = (
    TechniqueKind.STATIC,
    TechniqueKind.SS,
    TechniqueKind.GSS,
    TechniqueKind.TSS,
    TechniqueKind.FAC,
    TechniqueKind.RAND,
)
DEFAULT_PROC_TECHNIQUES: tuple[TechniqueKind, ...] = (
    TechniqueKind.NODLB,
    TechniqueKind.MFSC,
    TechniqueKind.GSS,
    TechniqueKind.TSS,
    TechniqueKind.FAC,
    TechniqueKind.AWF,
    TechniqueKind.AWF_B,
    TechniqueKind.AWF_C,
    TechniqueKind.AWF_D,
    TechniqueKind.AWF_E,
    TechniqueKind.AF,
)

# Permitted only behind an explicit override flag: FSC needs h/sigma profiling,
# process-level SS wastes the thread-level parallelism of a rank, and WF's
# fixed weights target heterogeneous machines.
EXCLUDED_THREAD_TECHNIQUES: frozenset[TechniqueKind] = frozenset({TechniqueKind.FSC})
EXCLUDED_PROC_TECHNIQUES: frozenset[TechniqueKind] = frozenset(
    {TechniqueKind.FSC, TechniqueKind.SS, TechniqueKind.WF}
)


def parse_technique(name: str) -> TechniqueKind:
    """Parse a technique tag, tolerant of case and ``-``/``_`` variation.

    ``parse_technique(str(kind)) == kind`` for every member.
    """
    if not isinstance(name, str):
        raise ValueError(f"technique name must be a string, got {type(name).__name__}")
    key = name.strip().upper().replace("-", "_")
    for member in TechniqueKind:
        if member.name == key or member.value.upper().replace("-", "_") == key:
            return member
    valid = ", ".join(t.value for t in TechniqueKind)
    raise ValueError(f"unknown technique {name!r}; valid techniques: {valid}")
