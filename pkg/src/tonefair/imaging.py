"""Hair and lesion masking: reduce a dermoscopic image to its pure-skin pixels."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np

from .errors import EmptySkinRegion
from .tone import rgb_to_lab


@dataclass(frozen=True)
class HairParams:
    clahe_clip: float = 2.0
    clahe_tiles: int = 8
    kernel_size: int = 17
    kernel_shape: str = "cross"
    threshold: int = 10
    dilation: int = 1

    def to_dict(self):
        return asdict(self)


_SHAPES = {"cross": cv2.MORPH_CROSS, "rect": cv2.MORPH_RECT, "ellipse": cv2.MORPH_ELLIPSE}


def _check_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    return image.astype(np.uint8, copy=False)


def detect_hair_mask(image, params=HairParams()):
    """Boolean mask of hair-like pixels (dark thin structures on lighter skin).

    grayscale -> CLAHE -> black-hat -> threshold -> dilation.
    """
    image = _check_image(image)
    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
    if gray.min() == gray.max():
        # CLAHE leaves a flat image flat and black-hat of a constant is zero
        return np.zeros(gray.shape, dtype=bool)
    clahe = cv2.createCLAHE(clipLimit=params.clahe_clip,
                            tileGridSize=(params.clahe_tiles, params.clahe_tiles))
    enhanced = clahe.apply(gray)
    kernel = cv2.getStructuringElement(_SHAPES[params.kernel_shape],
                                       (params.kernel_size, params.kernel_size))
    blackhat = cv2.morphologyEx(enhanced, cv2.MORPH_BLACKHAT, kernel,
                                borderType=cv2.BORDER_REPLICATE)
    mask = (blackhat > params.threshold).astype(np.uint8)
    if params.dilation > 0:
        size = 2 * params.dilation + 1
        mask = cv2.dilate(mask, np.ones((size, size), np.uint8))
    return mask.astype(bool)


def extract_skin_pixels(image, lesion, hair):
    """Lab values of every pixel excluded by neither mask, shape (n, 3)."""
    image = _check_image(image)
    lesion = np.asarray(lesion, dtype=bool)
    hair = np.asarray(hair, dtype=bool)
    if lesion.shape != image.shape[:2] or hair.shape != image.shape[:2]:
        raise ValueError(f"mask shapes {lesion.shape}/{hair.shape} do not match image {image.shape[:2]}")
    keep = ~(lesion | hair)
    if not keep.any():
        raise EmptySkinRegion("no skin pixels left after masking")
    return rgb_to_lab(image[keep])


def lesion_lab(image, lesion):
    """Mean Lab colour inside the lesion mask, or None when the mask is empty."""
    lesion = np.asarray(lesion, dtype=bool)
    if not lesion.any():
        return None
    return rgb_to_lab(_check_image(image)[lesion]).mean(axis=0)


def read_rgb(path):
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise OSError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def read_mask(path):
    """Single-channel mask; nonzero means lesion."""
    m = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if m is None:
        raise OSError(f"cannot read mask {path}")
    return m > 0


def write_rgb(path, image):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(_check_image(image), cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write {path}")


def write_mask(path, mask):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), np.asarray(mask, dtype=bool).astype(np.uint8) * 255):
        raise OSError(f"cannot write {path}")
