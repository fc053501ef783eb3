"""On-disk datasets: a JSON manifest next to one ``.rfr`` blob per record.

Each record blob stores 20 planes: the previous fine patch (4 bands), the
current coarse patch (4), the current fine target (4), the previous coarse
patch (4), then one 0/1 validity plane per constituent in the same order.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import jsonschema
import numpy as np

from ..raster import BAND_ORDER, BandSet, Raster
from . import rfr
from .pipeline import SPLITS, DataError, DatasetManifest, PatchRecord, RecordEntry

FORMAT = "cganfusion-dataset"
FORMAT_VERSION = 1
PARTS = ("l_prev", "m_curr", "l_target", "m_prev")
RECORD_PLANES = 20


def record_layout(bands: Sequence[str] = BAND_ORDER) -> list[str]:
    return [f"{part}:{b}" for part in PARTS for b in bands] + [f"mask:{part}" for part in PARTS]


def manifest_schema() -> dict:
    text = resources.files("cganfusion.data").joinpath("manifest.schema.json").read_text()
    return json.loads(text)


def encode_record(rec: PatchRecord) -> np.ndarray:
    parts = [rec.l_prev, rec.m_curr, rec.l_target, rec.m_prev]
    if parts[3] is None:
        # No previous coarse patch: store an all-invalid placeholder.
        parts[3] = Raster(np.zeros_like(rec.l_prev.data), np.zeros_like(rec.l_prev.mask), rec.l_prev.bands)
    planes = [np.where(r.mask[None], r.data, 0.0).astype(np.float32) for r in parts]
    masks = np.stack([r.mask for r in parts]).astype(np.float32)
    return np.concatenate(planes + [masks], axis=0)


def decode_record(arr: np.ndarray, entry: RecordEntry, bands: BandSet) -> PatchRecord:
    nb = len(bands)
    n = len(PARTS)
    masks = arr[n * nb :] > 0.5
    rasters = [Raster(arr[i * nb : (i + 1) * nb], masks[i], bands) for i in range(n)]
    m_prev = rasters[3] if masks[3].any() else None
    return PatchRecord(
        entry.location_id, entry.date_index, *rasters[:3], date=entry.date, prev_date=entry.prev_date, m_prev=m_prev
    )


def manifest_to_json(m: DatasetManifest) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "patch_size": m.patch_size,
        "stride": m.stride,
        "band_order": list(m.band_order),
        "layout": record_layout(m.band_order),
        "qa_threshold": m.qa_threshold,
        "split_seed": m.split_seed,
        "split_ratios": list(m.split_ratios),
        "locations": [{"location_id": loc, "split": m.splits[loc]} for loc in sorted(m.splits)],
        "counts": {
            "locations": {**m.location_counts, "total": len(m.splits)},
            "records": {**m.record_counts, "total": len(m.records)},
        },
        "records": [
            {**asdict(r), "valid_fraction": list(r.valid_fraction), "shape": list(r.shape)} for r in m.records
        ],
        "meta": m.meta,
    }


def manifest_from_json(doc: dict, path="<manifest>") -> DatasetManifest:
    try:
        jsonschema.validate(doc, manifest_schema())
    except jsonschema.ValidationError as e:
        raise DataError(f"{path}: invalid manifest: {e.message}") from None
    m = DatasetManifest(
        splits={d["location_id"]: d["split"] for d in doc["locations"]},
        split_seed=doc["split_seed"],
        split_ratios=tuple(doc["split_ratios"]),
        patch_size=doc["patch_size"],
        stride=doc["stride"],
        band_order=tuple(doc["band_order"]),
        qa_threshold=doc["qa_threshold"],
        records=[
            RecordEntry(**{**r, "valid_fraction": tuple(r["valid_fraction"]), "shape": tuple(r["shape"])})
            for r in doc["records"]
        ],
        meta=doc.get("meta", {}),
    )
    for r in m.records:
        if m.splits.get(r.location_id) != r.split:
            raise DataError(f"{path}: record {r.file} split {r.split!r} disagrees with its location")
    counts = doc["counts"]
    if counts["records"]["total"] != len(m.records) or counts["locations"]["total"] != len(m.splits):
        raise DataError(f"{path}: counts do not match listed locations/records")
    return m


def write_dataset(
    records: Iterable[PatchRecord], manifest: DatasetManifest, manifest_path: str | Path
) -> DatasetManifest:
    """Write record blobs under ``<manifest dir>/records/`` and the manifest itself.

    ``manifest.splits`` must cover every record's location; the returned
    manifest carries the new record entries.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    (root / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        if rec.location_id not in manifest.splits:
            raise DataError(f"record location {rec.location_id!r} missing from split assignment")
        arr = encode_record(rec)
        rel = f"records/{rec.location_id}_{rec.date_index:03d}.rfr"
        digest = rfr.write_blob(root / rel, arr)
        entries.append(
            RecordEntry(
                file=rel,
                sha256=digest,
                location_id=rec.location_id,
                split=manifest.splits[rec.location_id],
                date_index=rec.date_index,
                date=rec.date,
                prev_date=rec.prev_date,
                valid_fraction=tuple(float(v) for v in rec.valid_fraction),
                shape=tuple(arr.shape),
            )
        )
    entries.sort(key=lambda e: (e.location_id, e.date_index))
    manifest.records = entries
    manifest_path.write_text(json.dumps(manifest_to_json(manifest), indent=1))
    return manifest


class Dataset:
    """Read side of a written dataset.

    Opening validates the manifest and checks that every referenced blob
    exists; blob checksums are verified on each load.
    """

    def __init__(self, manifest_path: str | Path):
        self.path = Path(manifest_path)
        self.root = self.path.parent
        try:
            doc = json.loads(self.path.read_text())
        except FileNotFoundError:
            raise DataError(f"manifest not found: {self.path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"{self.path}: not valid JSON ({e})") from None
        self.manifest = manifest_from_json(doc, self.path)
        self.bands = BandSet(self.manifest.band_order)
        missing = [r.file for r in self.manifest.records if not (self.root / r.file).is_file()]
        if missing:
            raise DataError(f"{self.path}: missing record file {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))

    def entries(self, split: str | None = None) -> list[RecordEntry]:
        if split is not None and split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.manifest.records if split is None or r.split == split]

    def __len__(self) -> int:
        return len(self.manifest.records)

    def load(self, entry: RecordEntry) -> PatchRecord:
        try:
            arr = rfr.read_blob(self.root / entry.file, entry.sha256, entry.shape)
        except rfr.BlobError as e:
            raise DataError(str(e)) from None
        return decode_record(arr, entry, self.bands)

    def order(self, split: str | None, shuffle_seed: int | None = None, epoch: int = 0) -> list[RecordEntry]:
        entries = self.entries(split)
        if shuffle_seed is None:
            return entries
        perm = np.random.default_rng([shuffle_seed, epoch]).permutation(len(entries))
        return [entries[i] for i in perm]

    def records(
        self,
        split: str | None = None,
        shuffle_seed: int | None = None,
        epoch: int = 0,
        shard: tuple[int, int] | None = None,
    ) -> Iterator[PatchRecord]:
        """Iterate records; ``shard=(k, n)`` yields every n-th record starting at k."""
        entries = self.order(split, shuffle_seed, epoch)
        if shard is not None:
            k, n = shard
            entries = entries[k::n]
        for e in entries:
            yield self.load(e)


def read_dataset(manifest_path: str | Path, split: str | None = None, shuffle_seed: int | None = None, epoch: int = 0):
    return Dataset(manifest_path).records(split, shuffle_seed, epoch)


def stack_batch(records: Sequence[PatchRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(conditioning, target, mask)`` arrays of shape (N,8,H,W), (N,4,H,W), (N,H,W)."""
    cond = np.stack([r.conditioning() for r in records]).astype(np.float32)
    target = np.stack([r.l_target.data for r in records]).astype(np.float32)
    mask = np.stack([r.mask for r in records])
    return cond, target, mask
