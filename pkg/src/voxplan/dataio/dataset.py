"""Dataset directories and train/test splitting.

A dataset directory holds either ``VXV1`` sample files (``*.vxv``) at its top
level, or an ``images/`` and a ``masks/`` subdirectory whose files pair up by
stem (``images/case01.nii`` with ``masks/case01.nii``, etc.).
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Tuple, TypeVar, Union

import numpy as np

from ..graph import Precision
from .nifti import read_nifti1
from .raw import read_raw, write_raw
from .volume import Sample, Volume

T = TypeVar("T")
VOLUME_SUFFIXES = (".nii", ".vxv")


def split_dataset(samples: Sequence[T], train_count: int, test_count: int, seed: int = 0) -> Tuple[List[T], List[T]]:
    """Seeded shuffle (PCG64 permutation), then a prefix split."""
    total = len(samples)
    if train_count < 0 or test_count < 0:
        raise ValueError("counts must be non-negative")
    if train_count + test_count > total:
        raise ValueError(f"train_count + test_count = {train_count + test_count} exceeds {total} samples")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(total)
    train = [samples[i] for i in order[:train_count]]
    test = [samples[i] for i in order[train_count : train_count + test_count]]
    return train, test


def read_volume(path: Union[str, Path], precision=Precision.SINGLE, part: str = "mask") -> Volume:
    """Read a ``.nii`` or ``.vxv`` file; for ``.vxv`` samples ``part`` selects image or mask."""
    path = Path(path)
    if path.suffix == ".nii":
        return read_nifti1(path, precision)
    if path.suffix == ".vxv":
        obj = read_raw(path)
        if isinstance(obj, Sample):
            obj = obj.mask if part == "mask" else obj.image
        return Volume(obj.data.astype(Precision.parse(precision).dtype), precision)
    raise ValueError(f"{path}: unsupported volume suffix {path.suffix!r}")


def volume_files(directory: Union[str, Path]) -> Dict[str, Path]:
    """Map stem -> path for volume files directly inside ``directory``."""
    out: Dict[str, Path] = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix in VOLUME_SUFFIXES:
            if p.stem in out:
                raise ValueError(f"{directory}: duplicate stem {p.stem!r}")
            out[p.stem] = p
    return out


def load_dataset(directory: Union[str, Path], precision=Precision.SINGLE) -> List[Tuple[str, Sample]]:
    directory = Path(directory)
    images, masks = directory / "images", directory / "masks"
    if images.is_dir() and masks.is_dir():
        image_files, mask_files = volume_files(images), volume_files(masks)
        missing = sorted(set(image_files) - set(mask_files))
        if missing:
            raise ValueError(f"{directory}: no mask for image(s) {', '.join(missing)}")
        out = []
        for stem, ipath in image_files.items():
            image = read_volume(ipath, precision, part="image")
            mask = read_volume(mask_files[stem], precision, part="mask")
            if image.dims != mask.dims:
                raise ValueError(f"{stem}: image dims {image.dims} differ from mask dims {mask.dims}")
            out.append((stem, Sample(image, mask)))
        return out
    out = []
    for stem, path in volume_files(directory).items():
        obj = read_raw(path) if path.suffix == ".vxv" else None
        if not isinstance(obj, Sample):
            raise ValueError(f"{path}: expected a VXV1 sample file (or use images/ + masks/ subdirectories)")
        out.append((stem, obj))
    if not out:
        raise ValueError(f"{directory}: no samples found")
    return out


def save_samples(directory: Union[str, Path], samples: Sequence[Sample], prefix: str = "phantom") -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(samples) - 1)))
    paths = []
    for i, s in enumerate(samples):
        p = directory / f"{prefix}_{i:0{width}d}.vxv"
        write_raw(p, s)
        paths.append(p)
    return paths
