"""
Shared helpers for output folders, number formatting and JSON files
"""
import json
import os

import numpy as np

# All CSV/JSON numbers are rendered with 9 significant digits
FLOAT_FORMAT = "%.9g"


def ensure_output_dir(path):
    """Create the folder (and parents) if it doesn't exist, return it"""
    if path and not os.path.exists(path):
        os.makedirs(path)
    return path


def round_sig(value, digits=9):
    """Round a float to `digits` significant digits (keeps ints and None as-is)"""
    if value is None or isinstance(value, (bool, int, np.integer)):
        return value
    return float(f"{float(value):.{digits}g}")


def write_json(data, path):
    """Write `data` as sorted, indented JSON so reruns are byte-identical"""
    ensure_output_dir(os.path.dirname(path))
    with open(path, "w", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def derive_seed(*parts):
    """
    Derive an independent 32-bit seed from a tuple of non-negative ints.

    Used so that (run seed, round, node) streams never overlap and do not
    depend on the order in which clients are processed.
    """
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
