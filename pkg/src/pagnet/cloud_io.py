"""Plain-text point-cloud files and dataset manifests.

Cloud format: one point per line, whitespace-separated columns
``x y z [nx ny nz] [label]`` (3, 4, 6, or 7 columns, consistent within a
file); ``#`` starts a comment. Floats are written with 9 significant digits,
which round-trips float32 exactly.

Manifest format: one ``path<TAB>label`` line per cloud, where label is a
class id or the literal ``seg`` for per-point-labeled files. Paths are
resolved relative to the manifest. Optional ``# split: ...`` and
``# format: ...`` comment headers are preserved.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud

FORMAT_TAG = "cloud-text-v1"
_COLUMN_LAYOUTS = {3: (False, False), 4: (False, True), 6: (True, False), 7: (True, True)}


class CloudParseError(ValueError):
    """A malformed cloud or manifest file; message carries path and line."""

    def __init__(self, path, lineno: int | None, message: str):
        self.path = str(path)
        self.lineno = lineno
        where = self.path if lineno is None else f"{self.path}:{lineno}"
        super().__init__(f"{where}: {message}")


def _strip_comment(line: str) -> str:
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


def read_cloud(path) -> PointCloud:
    rows: list[list[float]] = []
    width = None
    first_bad_width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = _strip_comment(raw).split()
            if not tokens:
                continue
            if width is None:
                width = len(tokens)
                if width not in _COLUMN_LAYOUTS:
                    raise CloudParseError(
                        path, lineno,
                        f"{width} columns; expected x y z [nx ny nz] [label]")
            elif len(tokens) != width:
                raise CloudParseError(
                    path, lineno, f"ragged row: {len(tokens)} columns, file uses {width}")
            has_normals, has_label = _COLUMN_LAYOUTS[width]
            values = []
            for i, tok in enumerate(tokens):
                is_label = has_label and i == width - 1
                try:
                    values.append(int(tok) if is_label else float(tok))
                except ValueError:
                    kind = "label" if is_label else "number"
                    raise CloudParseError(path, lineno, f"bad {kind} {tok!r}") from None
            rows.append(values)
    if not rows:
        raise CloudParseError(path, None, "empty cloud file")
    data = np.asarray(rows, dtype=np.float64)
    has_normals, has_label = _COLUMN_LAYOUTS[width]
    positions = data[:, :3].astype(np.float32)
    normals = data[:, 3:6].astype(np.float32) if has_normals else None
    labels = data[:, -1].astype(np.int64) if has_label else None
    try:
        return PointCloud(positions, normals=normals, labels=labels)
    except ValueError as e:
        raise CloudParseError(path, None, str(e)) from e


def write_cloud(path, cloud: PointCloud) -> None:
    columns = [cloud.positions]
    if cloud.normals is not None:
        columns.append(cloud.normals)
    floats = np.concatenate(columns, axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {FORMAT_TAG}\n")
        for i in range(cloud.n):
            line = " ".join(format(v, ".9g") for v in floats[i])
            if cloud.labels is not None:
                line += f" {int(cloud.labels[i])}"
            fh.write(line + "\n")


SEG_LABEL = "seg"


@dataclass
class DatasetManifest:
    entries: list[tuple[str, int | str]]    # (absolute path, class id or "seg")
    split: str = "train"
    format_tag: str = FORMAT_TAG
    path: str | None = None

    @property
    def is_segmentation(self) -> bool:
        return bool(self.entries) and self.entries[0][1] == SEG_LABEL

    def class_ids(self) -> list[int]:
        return [label for _, label in self.entries if isinstance(label, int)]


def read_manifest(path) -> DatasetManifest:
    entries: list[tuple[str, int | str]] = []
    split, fmt = "train", FORMAT_TAG
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            stripped = line.strip()
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if body.startswith("split:"):
                    split = body.partition(":")[2].strip()
                elif body.startswith("format:"):
                    fmt = body.partition(":")[2].strip()
                continue
            if not stripped:
                continue
            if "\t" not in line:
                raise CloudParseError(path, lineno, "expected 'path<TAB>label'")
            rel, _, label_text = line.partition("\t")
            label_text = label_text.strip()
            label: int | str
            if label_text == SEG_LABEL:
                label = SEG_LABEL
            else:
                try:
                    label = int(label_text)
                except ValueError:
                    raise CloudParseError(
                        path, lineno,
                        f"label must be an integer or {SEG_LABEL!r}, got {label_text!r}",
                    ) from None
                if label < 0:
                    raise CloudParseError(path, lineno, f"negative class id {label}")
            entries.append((os.path.join(base, rel), label))
    if not entries:
        raise CloudParseError(path, None, "empty manifest")
    kinds = {isinstance(label, str) for _, label in entries}
    if len(kinds) > 1:
        raise CloudParseError(path, None, "manifest mixes class ids and 'seg' entries")
    manifest = DatasetManifest(entries=entries, split=split, format_tag=fmt, path=str(path))
    ids = manifest.class_ids()
    if ids and sorted(set(ids)) != list(range(max(ids) + 1)):
        raise CloudParseError(path, None,
                              f"class ids must be contiguous from 0, got {sorted(set(ids))}")
    return manifest


def write_manifest(path, entries, split: str = "train") -> None:
    """entries: (path, class id or 'seg') pairs; paths are stored relative."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# split: {split}\n# format: {FORMAT_TAG}\n")
        for cloud_path, label in entries:
            rel = os.path.relpath(os.path.abspath(cloud_path), base)
            fh.write(f"{rel}\t{label}\n")


def load_manifest_clouds(manifest: DatasetManifest):
    """Read every referenced file. Returns (cloud, class id) pairs for
    classification manifests, or labeled clouds for segmentation ones."""
    if manifest.is_segmentation:
        clouds = []
        for cloud_path, _ in manifest.entries:
            cloud = read_cloud(cloud_path)
            if cloud.labels is None:
                raise CloudParseError(cloud_path, None,
                                      "segmentation manifest entry has no label column")
            clouds.append(cloud)
        return clouds
    return [(read_cloud(cloud_path), label) for cloud_path, label in manifest.entries]
