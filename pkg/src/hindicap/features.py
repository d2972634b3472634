"""Image feature extraction backends and the on-disk feature cache.

Real backends wrap torchvision classifiers with their heads removed, so each
image becomes the penultimate-layer activation vector (vgg16: 4096 entries at
224x224 input, resnet50/inceptionv3: 2048). The stub backend needs no images
or weights: it derives a deterministic unit-norm vector from (seed, image_id)
and is what every automated test uses.

The cache is a directory holding ``manifest.json`` plus ``features.bin``, all
vectors concatenated as little-endian float32 rows in manifest order.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_bytes, atomic_write_text

CACHE_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DATA_NAME = "features.bin"

BACKEND_DIMS = {"vgg16": 4096, "resnet50": 2048, "inceptionv3": 2048}
BACKEND_RESOLUTIONS = {"vgg16": 224, "resnet50": 224, "inceptionv3": 299}


class FeatureError(DataError):
    pass


@dataclass(frozen=True)
class ImageFeature:
    image_id: str
    vector: np.ndarray
    backend_name: str

    def __post_init__(self):
        object.__setattr__(
            self, "vector", np.asarray(self.vector, dtype=np.float32)
        )
        if self.vector.ndim != 1:
            raise FeatureError("feature vector must be one-dimensional")
        if not np.all(np.isfinite(self.vector)):
            raise FeatureError(f"non-finite feature entries for {self.image_id!r}")

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class StubBackend:
    """Deterministic pseudo-feature generator keyed by (seed, image_id)."""

    name = "stub"
    resolution = None

    def __init__(self, feature_dim: int = 64, seed: int = 0):
        if feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
        self.feature_dim = feature_dim
        self.seed = seed

    def extract_id(self, image_id: str) -> ImageFeature:
        return stub_extract(image_id, self.feature_dim, self.seed)

    # Stub "decodes" nothing; the id is carried in the bytes for interface parity.
    def extract(self, image_bytes: bytes, image_id: str) -> ImageFeature:
        return self.extract_id(image_id)


def stub_extract(image_id: str, dim: int, seed: int = 0) -> ImageFeature:
    """Unit-normalized pseudo-random vector, reproducible from (seed, image_id)."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # astronomically unlikely, but the contract says unit norm
        vec = np.ones(dim)
        norm = np.linalg.norm(vec)
    return ImageFeature(image_id, (vec / norm).astype(np.float32), "stub")


class TorchvisionBackend:
    """Pretrained CNN with its classification head removed."""

    def __init__(self, name: str):
        if name not in BACKEND_DIMS:
            raise ValueError(
                f"unknown backend {name!r}; expected one of {sorted(BACKEND_DIMS)}"
            )
        self.name = name
        self.feature_dim = BACKEND_DIMS[name]
        self.resolution = BACKEND_RESOLUTIONS[name]
        self._model = None
        self._transform = None
        self.preprocessing = None

    def _load(self):
        if self._model is not None:
            return
        import torch
        from torchvision import models

        try:
            if self.name == "vgg16":
                weights = models.VGG16_Weights.IMAGENET1K_V1
                model = models.vgg16(weights=weights)
                # keep the classifier through its second 4096-wide affine;
                # drop only the final 1000-way layer
                model.classifier = torch.nn.Sequential(
                    *list(model.classifier.children())[:-1]
                )
            elif self.name == "resnet50":
                weights = models.ResNet50_Weights.IMAGENET1K_V2
                model = models.resnet50(weights=weights)
                model.fc = torch.nn.Identity()
            else:
                weights = models.Inception_V3_Weights.IMAGENET1K_V1
                model = models.inception_v3(weights=weights)
                model.fc = torch.nn.Identity()
        except Exception as exc:
            raise FeatureError(
                f"pretrained weights for {self.name!r} unavailable; download them "
                f"first (torchvision caches under ~/.cache/torch): {exc}"
            ) from exc
        model.eval()
        self._model = model
        self._transform = weights.transforms()
        self.preprocessing = str(self._transform)

    def extract(self, image_bytes: bytes, image_id: str) -> ImageFeature:
        import torch
        from PIL import Image, UnidentifiedImageError

        self._load()
        try:
            image = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            raise FeatureError(f"cannot decode image {image_id!r}: {exc}") from exc
        batch = self._transform(image).unsqueeze(0)
        with torch.no_grad():
            vec = self._model(batch).squeeze(0).numpy()
        if vec.shape != (self.feature_dim,):
            raise FeatureError(
                f"backend {self.name} produced shape {vec.shape}, "
                f"expected ({self.feature_dim},)"
            )
        return ImageFeature(image_id, vec, self.name)


def make_backend(name: str, stub_dim: int = 64, stub_seed: int = 0):
    if name == "stub":
        return StubBackend(stub_dim, stub_seed)
    return TorchvisionBackend(name)


def extract_feature(backend, image_bytes: bytes, image_id: str) -> ImageFeature:
    feature = backend.extract(image_bytes, image_id)
    if feature.dim != backend.feature_dim:
        raise FeatureError(
            f"backend {backend.name} declared dim {backend.feature_dim} "
            f"but produced {feature.dim}"
        )
    return feature


IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".gif")


def extract_directory(backend, images_dir, image_ids=None) -> list[ImageFeature]:
    """Extract features for every image file in a directory (id = filename).

    With ``image_ids`` given, only those files are processed and each must
    exist. For the stub backend ids alone suffice and no files are read.
    """
    images_dir = Path(images_dir)
    if isinstance(backend, StubBackend):
        if image_ids is None:
            if not images_dir.is_dir():
                raise FeatureError(f"image directory not found: {images_dir}")
            image_ids = sorted(
                p.name for p in images_dir.iterdir()
                if p.suffix.lower() in IMAGE_SUFFIXES
            )
        return [backend.extract_id(i) for i in image_ids]

    if not images_dir.is_dir():
        raise FeatureError(f"image directory not found: {images_dir}")
    if image_ids is None:
        paths = sorted(
            p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
    else:
        paths = [images_dir / i for i in image_ids]
        for p in paths:
            if not p.exists():
                raise FeatureError(f"image file not found: {p}")
    if not paths:
        raise FeatureError(f"no image files under {images_dir}")
    return [extract_feature(backend, p.read_bytes(), p.name) for p in paths]


class FeatureCache:
    """In-memory image_id -> ImageFeature map with cache metadata."""

    def __init__(self, features, backend_name: str, feature_dim: int, preprocessing=None):
        self._features: dict[str, ImageFeature] = {}
        for f in features:
            if f.dim != feature_dim:
                raise FeatureError(
                    f"feature {f.image_id!r} has dim {f.dim}, cache expects {feature_dim}"
                )
            if f.image_id in self._features:
                raise FeatureError(f"duplicate feature id {f.image_id!r}")
            self._features[f.image_id] = f
        if not self._features:
            raise FeatureError("feature cache cannot be empty")
        self.backend_name = backend_name
        self.feature_dim = feature_dim
        self.preprocessing = preprocessing

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._features

    def __getitem__(self, image_id: str) -> ImageFeature:
        try:
            return self._features[image_id]
        except KeyError:
            raise FeatureError(f"no cached feature for image {image_id!r}") from None

    def __len__(self) -> int:
        return len(self._features)

    def __iter__(self):
        return iter(self._features)

    @property
    def image_ids(self) -> list[str]:
        return list(self._features)

    def values(self):
        return self._features.values()


def save_feature_cache(features, path, preprocessing=None) -> None:
    """Write manifest.json + features.bin; the manifest checksum covers the data.

    ``preprocessing`` (free text, e.g. the backend's canonical transform) is
    recorded verbatim so a cache documents how its vectors were produced.
    """
    if isinstance(features, FeatureCache):
        if preprocessing is None:
            preprocessing = features.preprocessing
        features = list(features.values())
    else:
        features = list(features)
    if not features:
        raise FeatureError("refusing to save an empty feature cache")
    dim = features[0].dim
    backend = features[0].backend_name
    for f in features:
        if f.dim != dim:
            raise FeatureError(
                f"mixed dims in cache: {f.image_id!r} has {f.dim}, expected {dim}"
            )
        if f.backend_name != backend:
            raise FeatureError(
                f"mixed backends in cache: {f.image_id!r} from {f.backend_name!r}"
            )
    ids = [f.image_id for f in features]
    if len(set(ids)) != len(ids):
        raise FeatureError("duplicate image ids in cache")

    matrix = np.stack([f.vector for f in features]).astype("<f4")
    payload = matrix.tobytes()
    manifest = {
        "format_version": CACHE_FORMAT_VERSION,
        "backend": backend,
        "feature_dim": dim,
        "count": len(features),
        "dtype": "<f4",
        "preprocessing": preprocessing,
        "image_ids": ids,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    # data first, manifest last: an interrupted save leaves no readable cache
    atomic_write_bytes(path / DATA_NAME, payload)
    atomic_write_text(
        path / MANIFEST_NAME,
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n",
    )


def load_feature_cache(path, expect_backend: str | None = None, expect_dim: int | None = None) -> FeatureCache:
    """Read a cache directory back; integrity is checked against the manifest."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FeatureError(f"feature cache manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FeatureError(f"corrupt cache manifest {manifest_path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != CACHE_FORMAT_VERSION:
        raise FeatureError(
            f"unsupported cache format version {version!r} "
            f"(this build reads {CACHE_FORMAT_VERSION})"
        )
    data_path = path / DATA_NAME
    if not data_path.exists():
        raise FeatureError(f"feature cache data file not found: {data_path}")
    payload = data_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise FeatureError(f"feature cache checksum mismatch in {path}")

    dim = int(manifest["feature_dim"])
    count = int(manifest["count"])
    ids = manifest["image_ids"]
    if len(ids) != count:
        raise FeatureError(f"cache manifest count {count} != {len(ids)} ids")
    expected_bytes = count * dim * 4
    if len(payload) != expected_bytes:
        raise FeatureError(
            f"cache data is {len(payload)} bytes, expected {expected_bytes}"
        )
    backend = manifest["backend"]
    if expect_backend is not None and backend != expect_backend:
        raise FeatureError(
            f"cache was built with backend {backend!r}, expected {expect_backend!r}"
        )
    if expect_dim is not None and dim != expect_dim:
        raise FeatureError(f"cache feature_dim {dim} != expected {expect_dim}")

    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    features = [ImageFeature(i, matrix[k].copy(), backend) for k, i in enumerate(ids)]
    return FeatureCache(features, backend, dim, manifest.get("preprocessing"))
