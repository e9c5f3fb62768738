"""The 14-way label scheme: five traffic classes crossed with three
encryption methods, minus Browsing/VPN (no such captures exist).

Index layout is a fixed bijection: traffic classes in the order
Video, VoIP, FileTransfer, Chat, Browsing; encryptions in the order
Unencrypted, Tor, VPN within each class; the missing Browsing/VPN slot
is skipped.  This puts Video/VPN at index 2 and FileTransfer/Tor at 7.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path


class TrafficClass(enum.Enum):
    VIDEO = "Video"
    VOIP = "VoIP"
    FILE_TRANSFER = "FileTransfer"
    CHAT = "Chat"
    BROWSING = "Browsing"


class Encryption(enum.Enum):
    UNENCRYPTED = "Unencrypted"
    TOR = "Tor"
    VPN = "VPN"


@dataclass(frozen=True)
class ClassLabel:
    index: int
    traffic_class: TrafficClass
    encryption: Encryption

    @property
    def name(self) -> str:
        return f"{self.traffic_class.value}-{self.encryption.value}"


def _build() -> tuple[ClassLabel, ...]:
    out = []
    for tc in TrafficClass:
        for enc in Encryption:
            if tc is TrafficClass.BROWSING and enc is Encryption.VPN:
                continue
            out.append(ClassLabel(len(out), tc, enc))
    return tuple(out)


LABELS: tuple[ClassLabel, ...] = _build()
NUM_CLASSES = len(LABELS)
LABEL_NAMES = [lab.name for lab in LABELS]

_BY_PAIR = {(lab.traffic_class, lab.encryption): lab for lab in LABELS}


def label_for(traffic_class: TrafficClass, encryption: Encryption) -> ClassLabel:
    """Look up the label for a (class, encryption) pair; Browsing/VPN raises."""
    try:
        return _BY_PAIR[(traffic_class, encryption)]
    except KeyError:
        raise ValueError(
            f"no label for {traffic_class.value}/{encryption.value}"
        ) from None


def labels_for_encryption(encryption: Encryption) -> list[ClassLabel]:
    return [lab for lab in LABELS if lab.encryption is encryption]


def labels_for_traffic_class(traffic_class: TrafficClass) -> list[ClassLabel]:
    return [lab for lab in LABELS if lab.traffic_class is traffic_class]


def _canon(token: str) -> str:
    return token.strip().lower().replace(" ", "").replace("-", "").replace("_", "")


_TC_ALIASES = {_canon(tc.value): tc for tc in TrafficClass}
_TC_ALIASES["filetransfer"] = TrafficClass.FILE_TRANSFER
_ENC_ALIASES = {_canon(e.value): e for e in Encryption}
_ENC_ALIASES["nonvpn"] = Encryption.UNENCRYPTED
_ENC_ALIASES["none"] = Encryption.UNENCRYPTED


def parse_traffic_class(token: str) -> TrafficClass:
    try:
        return _TC_ALIASES[_canon(token)]
    except KeyError:
        raise ValueError(f"unknown traffic class {token!r}") from None


def parse_encryption(token: str) -> Encryption:
    try:
        return _ENC_ALIASES[_canon(token)]
    except KeyError:
        raise ValueError(f"unknown encryption {token!r}") from None


MANIFEST_HEADER = ["capture_file", "traffic_class", "encryption"]


class ManifestError(ValueError):
    pass


def read_manifest(text: str) -> dict[str, ClassLabel]:
    """Parse a label manifest (capture_file,traffic_class,encryption) into a
    filename -> label map.  Filenames are matched by basename."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise ManifestError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
    out: dict[str, ClassLabel] = {}
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"line {i}: expected 3 fields, got {len(row)}")
        name = Path(row[0].strip()).name
        try:
            label = label_for(parse_traffic_class(row[1]), parse_encryption(row[2]))
        except ValueError as exc:
            raise ManifestError(f"line {i}: {exc}") from None
        out[name] = label
    return out


def read_manifest_file(path: str | Path) -> dict[str, ClassLabel]:
    return read_manifest(Path(path).read_text())
