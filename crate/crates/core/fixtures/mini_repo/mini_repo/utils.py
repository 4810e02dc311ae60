"""Small text helpers."""
import os


def read_lines(path):
    """Read a text file and return its non-empty lines without trailing newlines."""
    with open(path, encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle if line.strip()]


def parse_config(lines):
    """Parse ``key = value`` lines into a dictionary, skipping comment lines."""
    entries = {}
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def normalize_key(key):
    return key.strip().lower().replace("-", "_")
