#!/usr/bin/env python3
"""
Modelos del conjunto de datos: corpus de segmentos, pares etiquetados.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

from pydantic import BaseModel, Field

from app.models.signal import DeviceKind, Segment, SegmentRef

POSITIVE = 1
NEGATIVE = 0


@dataclass(frozen=True)
class SegmentPair:
    """Par (token, wearable) con etiqueta 1 = mismo sujeto simultáneo"""
    a: SegmentRef
    b: SegmentRef
    label: int

    @property
    def subjects(self) -> Tuple[str, str]:
        return (self.a.subject_id, self.b.subject_id)


@dataclass(frozen=True, eq=False)
class PairSet:
    pairs: Tuple[SegmentPair, ...]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SegmentPair]:
        return iter(self.pairs)

    @property
    def n_positive(self) -> int:
        return sum(1 for p in self.pairs if p.label == POSITIVE)

    @property
    def n_negative(self) -> int:
        return sum(1 for p in self.pairs if p.label == NEGATIVE)


@dataclass(eq=False)
class Corpus:
    """sujeto → dispositivo → segmentos estandarizados ordenados por inicio"""
    segments: Dict[str, Dict[str, List[Segment]]]
    device_kinds: Dict[str, DeviceKind]
    _index: Optional[Dict[SegmentRef, Segment]] = field(default=None, repr=False)

    @property
    def subjects(self) -> List[str]:
        return sorted(self.segments)

    @property
    def devices(self) -> List[str]:
        return sorted(self.device_kinds)

    def iter_segments(self) -> Iterator[Segment]:
        for subject in self.subjects:
            for device in sorted(self.segments[subject]):
                yield from self.segments[subject][device]

    def lookup(self, ref: SegmentRef) -> Segment:
        if self._index is None:
            self._index = {seg.ref: seg for seg in self.iter_segments()}
        return self._index[ref]

    def __len__(self) -> int:
        return sum(len(segs) for devs in self.segments.values() for segs in devs.values())

    def validate(self) -> None:
        """Comprueba orden temporal, tasa y duración comunes"""
        shapes = set()
        for subject, devices in self.segments.items():
            for device, segs in devices.items():
                if device not in self.device_kinds:
                    raise ValueError(f"Device {device} of subject {subject} has no kind tag")
                starts = [s.start_time for s in segs]
                if starts != sorted(starts):
                    raise ValueError(f"Segments of {subject}/{device} not sorted by start_time")
                shapes.update((s.rate, s.duration_s) for s in segs)
        if len(shapes) > 1:
            raise ValueError(f"Corpus mixes segment rates/durations: {sorted(shapes)}")


@dataclass(frozen=True)
class LosoSplit:
    """Partición leave-one-subject-out"""
    train_subjects: Tuple[str, ...]
    test_subject: str
    excluded_device: Optional[str] = None


class PairRecord(BaseModel):
    subject_a: str
    device_a: str
    t_a: int
    subject_b: str
    device_b: str
    t_b: int
    label: int = Field(ge=0, le=1)


class PairManifest(BaseModel):
    """Manifiesto JSON de un PairSet: referencias de segmentos + política y semilla"""
    format: str = "crosspulse-pairs"
    version: int = 1
    provenance: Dict[str, Any] = Field(default_factory=dict)
    pairs: List[PairRecord] = Field(default_factory=list)
