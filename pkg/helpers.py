import csv
import hashlib
import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def fingerprint(config_dict):
    """Short sha256 of the canonical JSON form of a config."""
    return hashlib.sha256(canonical_json(config_dict).encode("utf-8")).hexdigest()[:16]


def ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path, data):
    ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"wrote {path}")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path, header, rows):
    ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"wrote {len(rows)} rows to {path}")


def format_float(value):
    # repr keeps every bit, so re-running produces byte-identical CSVs
    return repr(float(value))


def summarize(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "median": float("nan"), "n": 0}
    return {"mean": float(values.mean()), "std": float(values.std()),
            "median": float(np.median(values)), "n": int(values.size)}
