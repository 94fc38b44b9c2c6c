"""Input validation helpers shared by the estimators and the model stack."""

from __future__ import annotations

import numpy as np
import torch

from .errors import InputError


def as_image_tensor(X, *, channels: int, image_size: int, dtype=torch.float32) -> torch.Tensor:
    """Coerce an image batch to a (n, channels, image_size, image_size) tensor.

    Accepts numpy arrays or torch tensors shaped (n, H, W), (n, H, W, C) or
    (n, C, H, W). Raises InputError when the spatial size or channel count
    does not match the backbone configuration.
    """
    if isinstance(X, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(X))
    elif isinstance(X, torch.Tensor):
        t = X
    else:
        t = torch.as_tensor(np.asarray(X))
    t = t.to(dtype)

    if t.ndim == 3:
        t = t.unsqueeze(1)
    elif t.ndim == 4:
        # accept channels-last and move to channels-first
        if t.shape[-1] == channels and t.shape[1] != channels:
            t = t.permute(0, 3, 1, 2).contiguous()
    else:
        raise InputError(f"expected an image batch with 3 or 4 dims, got shape {tuple(t.shape)}")

    n, c, h, w = t.shape
    if c != channels:
        raise InputError(f"expected {channels} channel(s), got {c}")
    if h != image_size or w != image_size:
        raise InputError(f"expected {image_size}x{image_size} images, got {h}x{w}")
    return t


def as_label_array(y, n_expected: int | None = None) -> np.ndarray:
    """Coerce labels to a 1-D int64 array, optionally checking the length."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise InputError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == arr.astype(np.int64)):
            arr = arr.astype(np.int64)
        else:
            raise InputError("labels must be integers")
    if n_expected is not None and len(arr) != n_expected:
        raise InputError(f"got {len(arr)} labels for {n_expected} samples")
    return arr.astype(np.int64)
