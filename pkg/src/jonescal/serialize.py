"""JSON helpers: complex arrays travel as nested lists with [re, im] leaves."""

import json

import numpy as np


def complex_to_pairs(arr):
    """Nested-list representation of a complex array, innermost [re, im]."""
    a = np.asarray(arr, dtype=complex)
    stacked = np.stack([a.real, a.imag], axis=-1)
    return stacked.tolist()


def pairs_to_complex(obj) -> np.ndarray:
    """Inverse of :func:`complex_to_pairs`."""
    a = np.asarray(obj, dtype=float)
    if a.shape[-1] != 2:
        raise ValueError("expected innermost [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def real_to_list(arr):
    return np.asarray(arr, dtype=float).tolist()


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
