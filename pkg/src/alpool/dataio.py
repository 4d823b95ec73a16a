"""Dataset serialization and the synthetic noisy/heterogeneous pool generator.

On-disk layout of a dataset:

- manifest: JSON key/value document (fields of :class:`DatasetManifest`)
- features: magic ``AFTR``, uint32-LE sample count N, uint32-LE dim d,
  then N*d little-endian float32 values, row-major
- labels: one uint16-LE class index per sample, no header (the manifest
  carries the count)

Soft labels are never serialized in datasets; they only arise from
annotation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import MISSING, dataclass, fields
from pathlib import Path

import numpy as np

from alpool.core import Pool, Sample

FEATURE_MAGIC = b"AFTR"


class DatasetFormatError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass
class DatasetManifest:
    """Metadata describing one on-disk dataset."""

    name: str
    class_count: int
    class_names: list[str]
    feature_dim: int
    sample_count: int
    features_path: str
    labels_path: str
    audio_refs: list[str] | None = None
    provenance: list[str] | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise DatasetFormatError(f"unknown manifest fields: {sorted(unknown)}")
        required = {f.name for f in fields(cls) if f.default is MISSING}
        missing = required - set(raw)
        if missing:
            raise DatasetFormatError(f"manifest missing fields: {sorted(missing)}")
        return cls(**raw)


def write_manifest(manifest: DatasetManifest, path: str | Path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"manifest {path} is not valid JSON: {err}") from err
    return DatasetManifest.from_dict(raw)


def write_features(matrix, path: str | Path):
    """Write an N x d float32 matrix in the AFTR container. Rejects non-finite values."""
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise DatasetFormatError(f"feature matrix must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = int(np.argwhere(~np.all(np.isfinite(m), axis=1))[0][0])
        raise DatasetFormatError(f"non-finite feature value in record {bad}")
    n, d = m.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(m.astype("<f4").tobytes(order="C"))


def read_features(path: str | Path) -> np.ndarray:
    """Read an AFTR container back into an N x d float32 matrix."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise DatasetFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != FEATURE_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {blob[:4]!r}")
    n, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(blob)} bytes, expected {expected} for {n}x{d}"
        )
    m = np.frombuffer(blob[12:], dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(m)):
        bad = int(np.argwhere(~np.all(np.isfinite(m), axis=1))[0][0])
        raise DatasetFormatError(f"{path}: non-finite feature value in record {bad}")
    return m.copy()


def write_labels(labels, path: str | Path):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DatasetFormatError("labels must be a 1-d array")
    if np.any(arr < 0) or np.any(arr > 0xFFFF):
        raise DatasetFormatError("label out of uint16 range")
    Path(path).write_bytes(arr.astype("<u2").tobytes())


def read_labels(path: str | Path, sample_count: int, class_count: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) != 2 * sample_count:
        raise DatasetFormatError(
            f"{path}: {len(blob)} bytes, expected {2 * sample_count} for {sample_count} labels"
        )
    labels = np.frombuffer(blob, dtype="<u2").astype(np.int64)
    bad = np.nonzero(labels >= class_count)[0]
    if bad.size:
        raise DatasetFormatError(
            f"{path}: record {int(bad[0])} has class index {int(labels[bad[0]])}"
            f" >= class_count {class_count}"
        )
    return labels


def load_dataset(manifest_path: str | Path) -> Pool:
    """Load a manifest-described dataset as a fully unlabeled pool.

    True labels are attached to the samples but only reachable through the
    annotation layer; dimension mismatches, non-finite features and
    out-of-range labels fail with the offending record index.
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    features = read_features(base / manifest.features_path)
    if features.shape[0] != manifest.sample_count:
        raise DatasetFormatError(
            f"manifest sample_count {manifest.sample_count} != payload rows {features.shape[0]}"
        )
    if features.shape[1] != manifest.feature_dim:
        raise DatasetFormatError(
            f"manifest feature_dim {manifest.feature_dim} != payload dim {features.shape[1]}"
        )
    labels = read_labels(base / manifest.labels_path, manifest.sample_count, manifest.class_count)
    samples = []
    for i in range(manifest.sample_count):
        samples.append(
            Sample(
                id=f"s{i:06d}",
                features=features[i].astype(np.float64),
                true_label=int(labels[i]),
                audio_ref=manifest.audio_refs[i] if manifest.audio_refs else None,
                source=manifest.provenance[i] if manifest.provenance else None,
            )
        )
    return Pool(samples, class_count=manifest.class_count)


@dataclass
class SyntheticSpec:
    """Recipe for a Gaussian-mixture pool with label noise, duplicates and
    shifted sub-sources.

    ``structure_seed`` pins the class means/scales and source shifts
    independently of ``seed`` so a clean evaluation set can share the class
    geometry of a noisy pool.
    """

    class_count: int
    feature_dim: int
    samples_per_class: int
    outlier_fraction: float = 0.0
    duplicate_fraction: float = 0.0
    source_count: int = 1
    source_shift: float = 1.0
    class_separation: float = 3.0
    class_means: list[list[float]] | None = None
    class_scales: list[float] | None = None
    seed: int = 0
    structure_seed: int | None = None

    def validate(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.feature_dim < 1 or self.samples_per_class < 1:
            raise ValueError("feature_dim and samples_per_class must be >= 1")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if not 0.0 <= self.duplicate_fraction < 1.0:
            raise ValueError("duplicate_fraction must be in [0, 1)")
        if self.source_count < 1:
            raise ValueError("source_count must be >= 1")
        if self.class_means is not None and (
            len(self.class_means) != self.class_count
            or any(len(m) != self.feature_dim for m in self.class_means)
        ):
            raise ValueError("class_means must be class_count x feature_dim")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        spec = cls(**raw)
        spec.validate()
        return spec


def generate_synthetic(spec: SyntheticSpec):
    """Draw a synthetic pool: (features float32, labels, sources).

    Deterministic for a fixed spec. Exactly round(outlier_fraction * N)
    samples get a uniformly re-drawn wrong label, and exactly
    round(duplicate_fraction * N) rows are exact feature copies of earlier
    rows (label copied too, before outlier flips). Each of the
    ``source_count`` simulated sub-corpora applies its own mean shift.
    """
    spec.validate()
    c, d = spec.class_count, spec.feature_dim
    n = c * spec.samples_per_class

    structure_entropy = spec.seed if spec.structure_seed is None else spec.structure_seed
    rng_structure = np.random.default_rng(np.random.SeedSequence(structure_entropy, spawn_key=(1,)))
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2,)))

    if spec.class_means is not None:
        means = np.asarray(spec.class_means, dtype=np.float64)
        rng_structure.normal(size=(c, d))  # keep the stream aligned either way
    else:
        means = rng_structure.normal(size=(c, d)) * spec.class_separation
    scales = np.asarray(spec.class_scales if spec.class_scales is not None else [1.0] * c)
    shifts = np.zeros((spec.source_count, d))
    if spec.source_count > 1:
        shifts[1:] = rng_structure.normal(size=(spec.source_count - 1, d)) * spec.source_shift

    labels = np.repeat(np.arange(c), spec.samples_per_class)
    sources = np.arange(n) % spec.source_count
    noise = rng.normal(size=(n, d))
    features = means[labels] + shifts[sources] + noise * scales[labels][:, None]

    n_dup = int(round(spec.duplicate_fraction * n))
    if n_dup:
        targets = rng.choice(np.arange(1, n), size=n_dup, replace=False)
        for t in sorted(targets):
            origin = int(rng.integers(0, t))
            features[t] = features[origin]
            labels[t] = labels[origin]
            sources[t] = sources[origin]

    n_out = int(round(spec.outlier_fraction * n))
    if n_out:
        flip_idx = rng.choice(n, size=n_out, replace=False)
        for i in flip_idx:
            wrong = int(rng.integers(0, c - 1))
            if wrong >= labels[i]:
                wrong += 1
            labels[i] = wrong

    return features.astype(np.float32), labels.astype(np.int64), sources


def save_synthetic(spec: SyntheticSpec, out_dir: str | Path, name: str = "synthetic") -> Path:
    """Generate a dataset and write manifest + payloads. Returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features, labels, sources = generate_synthetic(spec)
    features_file = f"{name}.features"
    labels_file = f"{name}.labels"
    write_features(features, out / features_file)
    write_labels(labels, out / labels_file)
    manifest = DatasetManifest(
        name=name,
        class_count=spec.class_count,
        class_names=[f"class{j}" for j in range(spec.class_count)],
        feature_dim=spec.feature_dim,
        sample_count=features.shape[0],
        features_path=features_file,
        labels_path=labels_file,
        audio_refs=None,
        provenance=[f"source{int(s)}" for s in sources],
    )
    manifest_path = out / f"{name}.manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
