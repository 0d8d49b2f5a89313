"""Image I/O, synthetic noise, patch sampling and augmentation.

Images live as float64 arrays in [0, 1], shaped (H, W, C) in an
``ImageBuffer``; training samples are (C, H, W) arrays.  Every sample is a
pure function of (manifest seed, iteration, index).
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import functional as F
from .tensor import Tensor

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


class ImageFormatError(IOError):
    pass


@dataclass
class ImageBuffer:
    data: np.ndarray  # (H, W, C), float64 in [0, 1]

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (H, W, 1|3), got {d.shape}")
        self.data = np.clip(d, 0.0, 1.0)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def chw(self):
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))

    @classmethod
    def from_chw(cls, arr):
        return cls(np.asarray(arr).transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _read_pnm(raw, path):
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: bad magic {magic!r}, expected b'P5' or b'P6' (or a PNG signature)")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated header")
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # exactly one whitespace byte before the raster
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header {fields!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid header values {width}x{height} max {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * channels * dtype.itemsize
    body = raw[pos : pos + need]
    if len(body) < need:
        raise ImageFormatError(f"{path}: truncated raster ({len(body)} of {need} bytes)")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width, channels)
    return arr.astype(np.float64) / maxval


def _write_pnm(arr8, path):
    h, w, c = arr8.shape
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(arr8.tobytes())


def load_image(path):
    """Load an 8/16-bit PNG or binary PGM/PPM into an ``ImageBuffer``."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(PNG_SIGNATURE):
        from PIL import Image

        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("I;16", "I;16B", "I"):
                    return ImageBuffer(np.asarray(im, dtype=np.float64) / 65535.0)
                im = im.convert("L" if im.mode in ("L", "1", "LA") else "RGB")
                return ImageBuffer(np.asarray(im, dtype=np.float64) / 255.0)
        except OSError as exc:
            raise ImageFormatError(f"{path}: unreadable PNG ({exc})") from exc
    return ImageBuffer(_read_pnm(raw, path))


def quantize(data):
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(buf, path):
    """Write 8-bit PNG, PGM or PPM (chosen by suffix)."""
    if not isinstance(buf, ImageBuffer):
        buf = ImageBuffer(buf)
    path = Path(path)
    arr8 = quantize(buf.data)
    suffix = path.suffix.lower()
    if suffix == ".png":
        from PIL import Image

        Image.fromarray(arr8[:, :, 0] if buf.channels == 1 else arr8).save(path)
    elif suffix in (".pgm", ".ppm", ".pnm"):
        if suffix == ".pgm" and buf.channels != 1:
            raise ImageFormatError(f"{path}: PGM holds one channel, image has {buf.channels}")
        if suffix == ".ppm" and buf.channels != 3:
            raise ImageFormatError(f"{path}: PPM holds three channels, image has {buf.channels}")
        _write_pnm(arr8, path)
    else:
        raise ImageFormatError(f"{path}: unsupported suffix {suffix!r} (use .png, .pgm or .ppm)")


def to_channels(arr, channels):
    """Convert an (H, W, C) array to 1 (luma) or 3 (replicated) channels."""
    c = arr.shape[2]
    if c == channels:
        return arr
    if channels == 1:
        return (arr @ np.array([0.299, 0.587, 0.114]))[:, :, None]
    return np.repeat(arr, 3, axis=2)


# ---------------------------------------------------------------------------
# noise, crops, augmentation
# ---------------------------------------------------------------------------


def gaussian_field(shape, seed):
    """Standard normal samples via Box-Muller over a Philox counter stream."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    gen = np.random.Generator(np.random.Philox(seed))
    u1 = 1.0 - gen.random(m)  # (0, 1]
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate((r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)))
    return z[:n].reshape(shape)


def add_awgn(x, sigma_255, rng_seed):
    """clamp(x + N(0, (sigma/255)^2), 0, 1), deterministic in ``rng_seed``."""
    if sigma_255 < 0:
        raise ValueError("sigma must be non-negative")
    arr = x.data if isinstance(x, ImageBuffer) else np.asarray(x, dtype=np.float64)
    if sigma_255 == 0:
        out = arr.copy()
    else:
        out = np.clip(arr + gaussian_field(arr.shape, rng_seed) * (sigma_255 / 255.0), 0.0, 1.0)
    return ImageBuffer(out) if isinstance(x, ImageBuffer) else out


def crop_corner(height, width, patch, rng):
    if patch > height or patch > width:
        raise ValueError(f"patch {patch} larger than image {height}x{width}")
    return int(rng.integers(0, height - patch + 1)), int(rng.integers(0, width - patch + 1))


def sample_patch(x, y, patch, rng_seed):
    """Crop the same ``patch`` x ``patch`` window out of two (H, W, C) images.

    Returns the two crops as (C, patch, patch) arrays.
    """
    xa = x.data if isinstance(x, ImageBuffer) else x
    ya = y.data if isinstance(y, ImageBuffer) else y
    if xa.shape[:2] != ya.shape[:2]:
        raise ValueError(f"paired images differ in size: {xa.shape[:2]} vs {ya.shape[:2]}")
    top, left = crop_corner(xa.shape[0], xa.shape[1], patch, np.random.default_rng(rng_seed))
    win = (slice(top, top + patch), slice(left, left + patch))
    return (
        np.ascontiguousarray(xa[win].transpose(2, 0, 1)),
        np.ascontiguousarray(ya[win].transpose(2, 0, 1)),
    )


def dihedral(arr, k):
    """Element k in 0..7 of the dihedral group on the last two axes."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    if k % 2 and arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"90-degree rotation needs a square patch, got {arr.shape[-2:]}")
    out = np.rot90(arr, k % 4, axes=(-2, -1))
    if k >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def augment(pair, rng_seed=None, k=None):
    """Apply one random (or the given) dihedral transform to both members."""
    if k is None:
        k = int(np.random.default_rng(rng_seed).integers(0, 8))
    return tuple(dihedral(a, k) for a in pair)


def make_targets(clean_patch, levels):
    """Ground-truth pyramid on the same operator as the input pyramid."""
    t = clean_patch if isinstance(clean_patch, Tensor) else Tensor(clean_patch)
    return F.pyramid(t, levels)


# ---------------------------------------------------------------------------
# manifests and datasets
# ---------------------------------------------------------------------------


def parse_kv(text):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def format_kv(items):
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class DatasetManifest:
    """Where training images come from and how samples are synthesised.

    ``synthetic`` mode reads clean images from ``root`` (or ``root/clean``)
    and adds AWGN with sigma drawn uniformly from (low, high]; equal bounds
    give a fixed sigma.  ``paired`` mode reads ``root/noisy`` and ``root/gt``
    matched by file name.  With ``resample`` off, batch slot i gets the same
    crop, noise and transform at every iteration (a fixed training set).
    """

    root: str
    mode: str = "synthetic"
    sigma_range: tuple = (0.0, 50.0)
    patch: int = 64
    seed: int = 0
    augment: bool = True
    resample: bool = True
    channels: int = 3

    def __post_init__(self):
        self.sigma_range = tuple(float(s) for s in self.sigma_range)
        lo, hi = self.sigma_range
        if self.mode not in ("synthetic", "paired"):
            raise ValueError(f"mode must be 'synthetic' or 'paired', got {self.mode!r}")
        if self.mode == "synthetic" and not (0 <= lo <= hi <= 50 and hi > 0):
            raise ValueError(f"sigma range ({lo}, {hi}] must satisfy 0 <= low <= high <= 50, high > 0")
        if self.patch < 1:
            raise ValueError("patch must be positive")

    def check_levels(self, levels):
        f = 2 ** (levels - 1)
        if self.patch % f:
            raise ValueError(f"patch {self.patch} not divisible by 2^(levels-1) = {f}")

    @classmethod
    def from_kv(cls, d):
        d = dict(d)
        kw = {"root": d.pop("root")}
        if "mode" in d:
            kw["mode"] = d.pop("mode")
        if "sigma_range" in d:
            kw["sigma_range"] = tuple(float(s) for s in str(d.pop("sigma_range")).replace(",", " ").split())
        if "sigma" in d:
            s = float(d.pop("sigma"))
            kw["sigma_range"] = (s, s)
        for key in ("patch", "seed", "channels"):
            if key in d:
                kw[key] = int(d.pop(key))
        for key in ("augment", "resample"):
            if key in d:
                kw[key] = _parse_bool(d.pop(key))
        if d:
            raise ValueError(f"unknown manifest keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path):
        return cls.from_kv(parse_kv(Path(path).read_text()))

    def to_kv(self):
        return {
            "root": self.root,
            "mode": self.mode,
            "sigma_range": f"{self.sigma_range[0]:g} {self.sigma_range[1]:g}",
            "patch": self.patch,
            "seed": self.seed,
            "augment": str(self.augment).lower(),
            "resample": str(self.resample).lower(),
            "channels": self.channels,
        }


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def sample_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


class Dataset:
    """Index-addressable sample source built from a manifest."""

    def __init__(self, manifest):
        self.manifest = manifest
        root = Path(manifest.root)
        if manifest.mode == "synthetic":
            clean_dir = root / "clean" if (root / "clean").is_dir() else root
            self.clean_paths = list_images(clean_dir)
            self.noisy_paths = None
        else:
            self.clean_paths = list_images(root / "gt")
            names = {p.name: p for p in list_images(root / "noisy")}
            missing = [p.name for p in self.clean_paths if p.name not in names]
            if missing:
                raise FileNotFoundError(f"no noisy counterpart for {missing[:3]}")
            self.noisy_paths = [names[p.name] for p in self.clean_paths]
        if not self.clean_paths:
            raise FileNotFoundError(f"no images found under {root}")
        self._cache = {}

    def __len__(self):
        return len(self.clean_paths)

    def _image(self, path):
        if path not in self._cache:
            self._cache[path] = to_channels(load_image(path).data, self.manifest.channels)
        return self._cache[path]

    def sample(self, iteration, index):
        """(noisy, clean) pair of (C, patch, patch) arrays for one batch slot."""
        m = self.manifest
        keys = (m.seed, iteration, index) if m.resample else (m.seed, index)
        rng = np.random.default_rng(sample_seed(*keys))
        which = int(rng.integers(0, len(self)))
        clean = self._image(self.clean_paths[which])
        crop_seed, aug_seed, noise_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=3))
        u = rng.random()
        if m.mode == "paired":
            noisy = self._image(self.noisy_paths[which])
            noisy_p, clean_p = sample_patch(noisy, clean, m.patch, crop_seed)
        else:
            _, clean_p = sample_patch(clean, clean, m.patch, crop_seed)
            lo, hi = m.sigma_range
            sigma = hi - (hi - lo) * u  # uniform on (lo, hi]
            noisy_p = add_awgn(clean_p, sigma, noise_seed)
        if m.augment:
            noisy_p, clean_p = augment((noisy_p, clean_p), aug_seed)
        return noisy_p, clean_p

    def batch(self, iteration, size):
        pairs = [self.sample(iteration, b) for b in range(size)]
        noisy = np.stack([p[0] for p in pairs])
        clean = np.stack([p[1] for p in pairs])
        return noisy, clean


def write_resolved(path, items):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Path(path).write_text(format_kv(items))
