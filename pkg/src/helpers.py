"""Shared helpers: output directories, CSV/JSON writers and logging setup."""

import csv
import json
import logging
import os
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity=0):
    """WARNING by default, INFO with -v, DEBUG with -vv; always to stderr."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _ensure_dir(d):
    """Create ``d`` if needed and return it."""
    if d:
        os.makedirs(d, exist_ok=True)
    return d


def _ensure_parent(path):
    _ensure_dir(os.path.dirname(os.path.abspath(path)))


def write_csv(path_or_stream, header, rows):
    """Write a header row plus ``rows``; ``path_or_stream`` may be an open text stream."""
    if hasattr(path_or_stream, "write"):
        writer = csv.writer(path_or_stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    _ensure_parent(path_or_stream)
    with open(path_or_stream, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logging.getLogger(__name__).info("wrote %s", path_or_stream)


def write_json(path, data):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    logging.getLogger(__name__).info("wrote %s", path)
