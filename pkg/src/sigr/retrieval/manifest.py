"""Corpus manifest and ground-truth region files (CSV)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import FormatError

MANIFEST_HEADER = ["doc_id", "path", "identity", "bbox"]
REGION_HEADER = ["doc_id", "label", "row0", "col0", "row1", "col1"]


def format_bbox(bbox) -> str:
    return "" if bbox is None else " ".join(str(int(v)) for v in bbox)


def parse_bbox(text: str):
    text = text.strip()
    if not text:
        return None
    parts = text.replace(";", " ").replace(",", " ").split()
    if len(parts) != 4:
        raise FormatError(f"bbox needs four integers, got {text!r}")
    return tuple(int(p) for p in parts)


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    path: Path
    identity: str | None = None
    bbox: tuple | None = None


@dataclass
class Region:
    doc_id: str
    label: str
    bbox: tuple


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    regions: list[Region] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.doc_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("doc_ids in a manifest must be unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.doc_id: e for e in self.entries}

    def regions_for(self, doc_id: str) -> list[Region]:
        """Labelled regions of a document; falls back to the signature bbox."""
        found = [r for r in self.regions if r.doc_id == doc_id]
        if found:
            return found
        e = self.by_id().get(doc_id)
        if e is not None and e.bbox is not None:
            return [Region(doc_id, "signature", e.bbox)]
        return []

    def relevant(self, identity: str) -> set[str]:
        return {e.doc_id for e in self.entries if e.identity == identity}

    def subset(self, doc_ids) -> "CorpusManifest":
        keep = set(doc_ids)
        return CorpusManifest([e for e in self.entries if e.doc_id in keep],
                              [r for r in self.regions if r.doc_id in keep])


def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            p = Path(e.path)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            w.writerow([e.doc_id, p.as_posix(), e.identity or "", format_bbox(e.bbox)])
    if manifest.regions:
        write_regions(regions_path(path), manifest.regions)


def regions_path(manifest_path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.stem + "_regions.csv")


def write_regions(path, regions) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGION_HEADER)
        for r in regions:
            w.writerow([r.doc_id, r.label, *r.bbox])


def read_manifest(path, check_paths: bool = True) -> CorpusManifest:
    """Load a manifest; relative image paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"manifest line {lineno}: expected 4 fields")
            doc_id, p, identity, bbox = row
            p = Path(p)
            if not p.is_absolute():
                p = base / p
            if check_paths and not p.exists():
                raise FileNotFoundError(f"manifest line {lineno}: {p} does not exist")
            entries.append(ManifestEntry(doc_id, p, identity or None, parse_bbox(bbox)))
    regions = []
    rp = regions_path(path)
    if rp.exists():
        regions = read_regions(rp)
    return CorpusManifest(entries, regions)


def read_regions(path) -> list[Region]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REGION_HEADER:
            raise FormatError(f"regions header must be {','.join(REGION_HEADER)}")
        for row in reader:
            if row:
                out.append(Region(row[0], row[1], tuple(int(v) for v in row[2:6])))
    return out
