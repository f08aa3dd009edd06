"""Telemetry data model: tensor files, run manifests, loaders and validators.

Tensor file format (bit-exact)
------------------------------
    magic   4 bytes   b"SPT1"
    dtype   u8        0 = float32, 1 = int64, 2 = uint8
    rank    u8        0 < rank <= 5
    dims    rank*u64  little-endian extents, each >= 1
    payload row-major little-endian numeric data

Floating payloads are stored as 32-bit; everything downstream accumulates in
64-bit. ``write_tensor(read_tensor(path))`` is byte-identical.

Run manifests are JSON documents; unknown keys are rejected. The manifest is
the single source of truth for a run: no directory scanning. Loaded runs are
immutable (arrays are marked read-only) so any number of analyses may read one
run concurrently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, TelemetryError

MAGIC = b"SPT1"
MAX_RANK = 5

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "i": 1, "u": 2}


def write_tensor(path, array) -> None:
    """Serialize ``array`` to ``path``.

    Floats are cast to float32, signed integers to int64, unsigned/bool to
    uint8. Rank must be 1..5 and every extent >= 1.
    """
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype("u1")
    kind = arr.dtype.kind
    if kind not in _CODE_FOR_KIND:
        raise TelemetryError(f"unsupported dtype {arr.dtype} for tensor file '{path}'")
    code = _CODE_FOR_KIND[kind]
    arr = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
    if not 1 <= arr.ndim <= MAX_RANK:
        raise TelemetryError(f"rank {arr.ndim} out of range 1..{MAX_RANK} for '{path}'")
    if any(d < 1 for d in arr.shape):
        raise TelemetryError(f"zero-sized dim in shape {arr.shape} for '{path}'")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path):
    """Deserialize a tensor file; returns a read-only numpy array."""
    path = Path(path)
    if not path.is_file():
        raise TelemetryError(f"tensor file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise TelemetryError(f"bad magic in tensor file '{path}'")
    if len(raw) < 6:
        raise TelemetryError(f"truncated header in tensor file '{path}'")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in _DTYPE_CODES:
        raise TelemetryError(f"unknown dtype code {code} in '{path}'")
    if not 1 <= rank <= MAX_RANK:
        raise TelemetryError(f"rank {rank} out of range 1..{MAX_RANK} in '{path}'")
    header_end = 6 + 8 * rank
    dims = struct.unpack_from(f"<{rank}Q", raw, 6)
    if any(d < 1 for d in dims):
        raise TelemetryError(f"zero-sized dim {dims} in '{path}'")
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise TelemetryError(
            f"payload length {len(payload)} != dims product {expected} bytes in '{path}'"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    arr.flags.writeable = False
    return arr


# Manifest schema: required keys, then optional telemetry. Unknown keys are
# rejected so that stale or misspelled fields cannot silently change a run.
_REQUIRED_KEYS = {
    "run_id",
    "num_samples",
    "num_classes",
    "num_checkpoints",
    "checkpoint_stride",
    "labels",
    "logits",
    "class_prior",
}
_OPTIONAL_KEYS = {
    "features",          # {layer index: file}, one feature matrix per probed layer
    "images",            # N x H x W x C_img stack
    "weights",           # per-checkpoint flattened parameter vectors
    "grad_magnitudes",   # N x T scalar gradient magnitudes
    "activations",       # N x K x h x w target-layer activation maps
    "gradients",         # N x K x h x w matching first-order gradient maps
    "masks",             # N x H x W boolean ground-truth masks
    "kernels",           # K_out x kh x kw x C_in first-layer kernels
    "head_weights",      # C x n classifier head weight matrix
    "head_bias",         # C classifier head bias
}


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    num_samples: int
    num_classes: int
    num_checkpoints: int
    checkpoint_stride: int
    labels: str
    logits: tuple
    class_prior: tuple
    features: dict = field(default_factory=dict)
    images: str | None = None
    weights: tuple = ()
    grad_magnitudes: str | None = None
    activations: str | None = None
    gradients: str | None = None
    masks: str | None = None
    kernels: str | None = None
    head_weights: str | None = None
    head_bias: str | None = None


@dataclass(frozen=True)
class LoadedRun:
    """A fully validated, immutable run. All arrays are read-only."""

    manifest: RunManifest
    root: Path
    labels: np.ndarray            # (N,) int64
    logits: np.ndarray            # (T, N, C) float32
    class_prior: np.ndarray       # (C,) float64
    features: dict                # {layer index: (N, n_l) float32}, sorted keys
    images: np.ndarray | None = None
    weights: np.ndarray | None = None        # (T, P) float32
    grad_magnitudes: np.ndarray | None = None
    activations: np.ndarray | None = None
    gradients: np.ndarray | None = None
    masks: np.ndarray | None = None
    kernels: np.ndarray | None = None
    head_weights: np.ndarray | None = None
    head_bias: np.ndarray | None = None

    @property
    def num_samples(self):
        return self.manifest.num_samples

    @property
    def num_classes(self):
        return self.manifest.num_classes

    @property
    def num_checkpoints(self):
        return self.manifest.num_checkpoints

    def correctness(self):
        """(N, T) correctness matrix against the final labels."""
        out = np.empty((self.num_samples, self.num_checkpoints), dtype=bool)
        for t in range(self.num_checkpoints):
            out[:, t] = correctness_matrix(self.logits[t], self.labels)[:, 0]
        out.flags.writeable = False
        return out


def parse_manifest(manifest_path) -> RunManifest:
    path = Path(manifest_path)
    if not path.is_file():
        raise TelemetryError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TelemetryError(f"manifest '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise TelemetryError(f"manifest '{path}' must be a JSON object")
    keys = set(doc)
    unknown = keys - _REQUIRED_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise TelemetryError(f"manifest '{path}': unknown keys {sorted(unknown)}")
    missing = _REQUIRED_KEYS - keys
    if missing:
        raise TelemetryError(f"manifest '{path}': missing keys {sorted(missing)}")
    features = {int(k): v for k, v in doc.get("features", {}).items()}
    return RunManifest(
        run_id=str(doc["run_id"]),
        num_samples=int(doc["num_samples"]),
        num_classes=int(doc["num_classes"]),
        num_checkpoints=int(doc["num_checkpoints"]),
        checkpoint_stride=int(doc["checkpoint_stride"]),
        labels=doc["labels"],
        logits=tuple(doc["logits"]),
        class_prior=tuple(float(p) for p in doc["class_prior"]),
        features=features,
        images=doc.get("images"),
        weights=tuple(doc.get("weights", ())),
        grad_magnitudes=doc.get("grad_magnitudes"),
        activations=doc.get("activations"),
        gradients=doc.get("gradients"),
        masks=doc.get("masks"),
        kernels=doc.get("kernels"),
        head_weights=doc.get("head_weights"),
        head_bias=doc.get("head_bias"),
    )


def _load_checked(root, relpath, field_name, shape=None, finite=True):
    path = root / relpath
    try:
        arr = read_tensor(path)
    except TelemetryError as exc:
        raise TelemetryError(f"{field_name}: {exc}") from exc
    if shape is not None:
        if len(shape) != arr.ndim or any(
            want is not None and want != got for want, got in zip(shape, arr.shape)
        ):
            want_str = tuple("*" if s is None else s for s in shape)
            raise TelemetryError(
                f"dim mismatch in {field_name} '{path}': expected {want_str}, got {arr.shape}"
            )
    if finite and arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise TelemetryError(f"non-finite payload in {field_name} '{path}'")
    return arr


def load_run(manifest_path) -> LoadedRun:
    """Parse the manifest, load every referenced tensor, verify all invariants.

    Raises TelemetryError naming the offending file and field on any missing
    file, dim mismatch or non-finite payload.
    """
    manifest = parse_manifest(manifest_path)
    root = Path(manifest_path).parent
    N, C, T = manifest.num_samples, manifest.num_classes, manifest.num_checkpoints
    if min(N, C, T) < 1:
        raise TelemetryError(
            f"manifest '{manifest_path}': num_samples/num_classes/num_checkpoints must be >= 1"
        )

    prior = np.asarray(manifest.class_prior, dtype=np.float64)
    if prior.shape != (C,):
        raise TelemetryError(
            f"class_prior: expected {C} entries, got {prior.shape[0]}"
        )
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-6:
        raise TelemetryError("class_prior: entries must be nonnegative and sum to 1 +- 1e-6")

    labels = _load_checked(root, manifest.labels, "labels", shape=(N,))
    if labels.dtype.kind not in "iu":
        raise TelemetryError(f"labels '{manifest.labels}': must be an integer tensor")
    labels = labels.astype(np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise TelemetryError(f"labels '{manifest.labels}': class index out of range 0..{C - 1}")
    labels.flags.writeable = False

    if len(manifest.logits) != T:
        raise TelemetryError(
            f"logits: manifest declares num_checkpoints={T} but lists "
            f"{len(manifest.logits)} files"
        )
    logits = np.empty((T, N, C), dtype=np.float32)
    for t, rel in enumerate(manifest.logits):
        logits[t] = _load_checked(root, rel, f"logits[{t}]", shape=(N, C))
    logits.flags.writeable = False

    features = {}
    for layer in sorted(manifest.features):
        arr = _load_checked(root, manifest.features[layer], f"features[{layer}]", shape=(N, None))
        features[layer] = arr

    images = None
    if manifest.images is not None:
        images = _load_checked(root, manifest.images, "images", shape=(N, None, None, None))
        if images.shape[1] != images.shape[2]:
            raise TelemetryError(
                f"images '{manifest.images}': tiles must be square, got {images.shape[1:3]}"
            )

    weights = None
    if manifest.weights:
        if len(manifest.weights) != T:
            raise TelemetryError(
                f"weights: expected {T} snapshot files, got {len(manifest.weights)}"
            )
        first = _load_checked(root, manifest.weights[0], "weights[0]", shape=(None,))
        weights = np.empty((T, first.shape[0]), dtype=np.float32)
        weights[0] = first
        for t in range(1, T):
            weights[t] = _load_checked(
                root, manifest.weights[t], f"weights[{t}]", shape=(first.shape[0],)
            )
        weights.flags.writeable = False

    grad_magnitudes = None
    if manifest.grad_magnitudes is not None:
        grad_magnitudes = _load_checked(
            root, manifest.grad_magnitudes, "grad_magnitudes", shape=(N, T)
        )

    activations = gradients = None
    if (manifest.activations is None) != (manifest.gradients is None):
        raise TelemetryError("activations/gradients: both files are required, got one")
    if manifest.activations is not None:
        activations = _load_checked(
            root, manifest.activations, "activations", shape=(N, None, None, None)
        )
        gradients = _load_checked(
            root, manifest.gradients, "gradients", shape=activations.shape
        )

    masks = None
    if manifest.masks is not None:
        masks = _load_checked(root, manifest.masks, "masks", shape=(N, None, None))

    kernels = None
    if manifest.kernels is not None:
        kernels = _load_checked(root, manifest.kernels, "kernels", shape=(None,) * 4)

    head_weights = head_bias = None
    if (manifest.head_weights is None) != (manifest.head_bias is None):
        raise TelemetryError("head_weights/head_bias: both files are required, got one")
    if manifest.head_weights is not None:
        head_weights = _load_checked(root, manifest.head_weights, "head_weights", shape=(C, None))
        head_bias = _load_checked(root, manifest.head_bias, "head_bias", shape=(C,))
        if features:
            last = max(features)
            if head_weights.shape[1] != features[last].shape[1]:
                raise TelemetryError(
                    f"head_weights '{manifest.head_weights}': width "
                    f"{head_weights.shape[1]} != last-layer feature dim "
                    f"{features[last].shape[1]}"
                )

    prior.flags.writeable = False
    return LoadedRun(
        manifest=manifest,
        root=root,
        labels=labels,
        logits=logits,
        class_prior=prior,
        features=features,
        images=images,
        weights=weights,
        grad_magnitudes=grad_magnitudes,
        activations=activations,
        gradients=gradients,
        masks=masks,
        kernels=kernels,
        head_weights=head_weights,
        head_bias=head_bias,
    )


def standardize(images):
    """Per-channel Gaussian standardization over the whole stack.

    ``images`` is (N, H, W, C); returns a float32 stack where every channel has
    mean 0 and unit (population) variance, computed in float64. Statistics are
    estimated over the entire stack, not per tile, so relative contrasts
    between tiles survive.

    Raises DegenerateInputError on a zero-variance channel.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise TelemetryError(f"image stack must be 4-D (N,H,W,C), got shape {x.shape}")
    mean = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    bad = np.flatnonzero(var <= 0)
    if bad.size:
        raise DegenerateInputError(f"zero-variance channel(s) {bad.tolist()} in image stack")
    out = (x - mean) / np.sqrt(var)
    return out.astype(np.float32)


def correctness_matrix(logits, labels):
    """Boolean correctness of argmax predictions; ties break to the lowest class.

    Accepts (N, C) logits for one checkpoint or (T, N, C) for a full trace and
    returns (N, 1) or (N, T) respectively.
    """
    z = np.asarray(logits)
    y = np.asarray(labels)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3 or z.shape[1] != y.shape[0]:
        raise TelemetryError(
            f"logits shape {np.asarray(logits).shape} inconsistent with {y.shape[0]} labels"
        )
    # np.argmax returns the first maximal index, which is the documented tie rule
    pred = np.argmax(z, axis=2)
    return (pred == y[None, :]).T
