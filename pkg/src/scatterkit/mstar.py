"""Adapter for a user-supplied MSTAR chip tree described by a text manifest.

The manifest (``manifest.csv`` at the tree root) has one line per chip::

    relative_path,class,serial,depression_deg,azimuth_deg

A header line with exactly those names is optional.  The adapter selects the
once-for-all protocol partition and verifies every row count.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

MANIFEST_NAME = "manifest.csv"
FIELDS = ("relative_path", "class", "serial", "depression_deg", "azimuth_deg")
SETS = ("train_val", "OFA-1", "OFA-2", "OFA-3")

# (set, class, serial, depression, expected count)
PROTOCOL: tuple[tuple[str, str, str, int, int], ...] = (
    ("train_val", "BMP-2", "9563", 17, 233),
    ("train_val", "BTR-70", "C71", 17, 233),
    ("train_val", "T-72", "132", 17, 232),
    ("train_val", "BTR-60", "k10yt7532", 17, 256),
    ("train_val", "2S1", "b01", 17, 299),
    ("train_val", "BRDM-2", "E-71", 17, 298),
    ("train_val", "D7", "92v13015", 17, 299),
    ("train_val", "T-62", "A51", 17, 299),
    ("train_val", "ZIL-131", "E12", 17, 299),
    ("train_val", "ZSU-234", "d08", 17, 299),
    ("OFA-1", "BMP-2", "9563", 15, 195),
    ("OFA-1", "BTR-70", "C71", 15, 196),
    ("OFA-1", "T-72", "132", 15, 196),
    ("OFA-1", "BTR-60", "k10yt7532", 15, 195),
    ("OFA-1", "2S1", "b01", 15, 274),
    ("OFA-1", "BRDM-2", "E-71", 15, 274),
    ("OFA-1", "D7", "92v13015", 15, 274),
    ("OFA-1", "T-62", "A51", 15, 273),
    ("OFA-1", "ZIL-131", "E12", 15, 274),
    ("OFA-1", "ZSU-234", "d08", 15, 274),
    ("OFA-2", "BMP-2", "9563", 15, 195),
    ("OFA-2", "BMP-2", "9566", 15, 196),
    ("OFA-2", "BMP-2", "C21", 15, 196),
    ("OFA-2", "BTR-70", "C71", 15, 196),
    ("OFA-2", "T-72", "132", 15, 196),
    ("OFA-2", "T-72", "812", 15, 195),
    ("OFA-2", "T-72", "S7", 15, 191),
    ("OFA-2", "BTR-60", "k10yt7532", 15, 195),
    ("OFA-2", "2S1", "b01", 15, 274),
    ("OFA-2", "BRDM-2", "E-71", 15, 274),
    ("OFA-2", "D7", "92v13015", 15, 274),
    ("OFA-2", "T-62", "A51", 15, 273),
    ("OFA-2", "ZIL-131", "E12", 15, 274),
    ("OFA-2", "ZSU-234", "d08", 15, 274),
    ("OFA-3", "2S1", "b01", 15, 274),
    ("OFA-3", "2S1", "b01", 30, 288),
    ("OFA-3", "2S1", "b01", 45, 303),
    ("OFA-3", "BRDM-2", "E-71", 15, 274),
    ("OFA-3", "BRDM-2", "E-71", 30, 420),
    ("OFA-3", "BRDM-2", "E-71", 45, 423),
    ("OFA-3", "ZSU-234", "d08", 15, 274),
    ("OFA-3", "ZSU-234", "d08", 30, 406),
    ("OFA-3", "ZSU-234", "d08", 45, 422),
)

# Totals as printed in the protocol table.  The OFA-3 rows above add up to
# 3084; the printed total is kept separately so both can be reported.
PUBLISHED_TOTALS = {"train_val": 2747, "OFA-1": 2425, "OFA-2": 3203, "OFA-3": 3093}
CLASSES = ("BMP-2", "BTR-70", "T-72", "BTR-60", "2S1", "BRDM-2", "D7", "T-62", "ZIL-131", "ZSU-234")


class MissingSerialsError(FileNotFoundError):
    """Some (class, serial, depression) triples required by the protocol are absent."""

    def __init__(self, missing: list[tuple[str, str, int]]):
        self.missing = missing
        listing = "; ".join(f"({c}, {s}, {d}°)" for c, s, d in missing)
        super().__init__(f"{len(missing)} required (class, serial, depression) triples are "
                         f"absent: {listing}")


@dataclass(frozen=True)
class MstarItem:
    relative_path: str
    class_name: str
    serial: str
    depression_deg: float
    azimuth_deg: float

    @property
    def label(self) -> int:
        return CLASSES.index(self.class_name)


@dataclass
class MstarPools:
    sets: dict[str, list[MstarItem]]
    rows: list[tuple[str, str, str, int, int, int]]   # protocol row + found count

    def totals(self) -> dict[str, int]:
        return {s: len(self.sets[s]) for s in SETS}

    def protocol_totals(self) -> dict[str, int]:
        out = defaultdict(int)
        for s, *_, n in PROTOCOL:
            out[s] += n
        return dict(out)

    def serials(self, name: str) -> set[str]:
        return {it.serial for it in self.sets[name]}

    def report(self) -> str:
        lines = ["set,class,serial,depression_deg,expected,found,status"]
        for s, c, ser, dep, expected, found in self.rows:
            lines.append(f"{s},{c},{ser},{dep},{expected},{found},{'ok' if found == expected else 'MISMATCH'}")
        rows_total = self.protocol_totals()
        for s in SETS:
            lines.append(f"# total {s}: found {len(self.sets[s])}, rows {rows_total[s]}, "
                         f"published {PUBLISHED_TOTALS[s]}")
        return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> list[MstarItem]:
    items = []
    for n, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        row = [c.strip() for c in row]
        if tuple(row) == FIELDS:
            continue
        if len(row) != len(FIELDS):
            raise ValueError(f"manifest line {n}: expected {len(FIELDS)} fields, got {len(row)}")
        path, cls, serial, dep, az = row
        items.append(MstarItem(path, cls, serial, float(dep), float(az)))
    return items


def mstar_adapter(root, protocol=PROTOCOL, check_files: bool = True) -> MstarPools:
    """Select the protocol pools from the chip tree at ``root``.

    Raises :class:`MissingSerialsError` naming every absent triple (all of
    them when the tree or its manifest is missing).
    """
    root = Path(root)
    manifest = root / MANIFEST_NAME
    items = parse_manifest(manifest.read_text(encoding="utf-8")) if manifest.is_file() else []
    if check_files:
        items = [it for it in items if (root / it.relative_path).is_file()]
    by_triple: dict[tuple[str, str, int], list[MstarItem]] = defaultdict(list)
    for it in items:
        by_triple[(it.class_name, it.serial, int(round(it.depression_deg)))].append(it)
    missing = []
    for _, c, s, d, _ in protocol:
        if (c, s, d) not in by_triple and (c, s, d) not in missing:
            missing.append((c, s, d))
    if missing:
        raise MissingSerialsError(missing)
    sets = {s: [] for s in SETS}
    rows = []
    for s, c, ser, d, expected in protocol:
        found = sorted(by_triple[(c, ser, d)], key=lambda it: it.relative_path)
        sets[s].extend(found)
        rows.append((s, c, ser, d, expected, len(found)))
    return MstarPools(sets, rows)
