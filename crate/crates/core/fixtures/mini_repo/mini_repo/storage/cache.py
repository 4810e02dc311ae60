"""Bounded least-recently-used cache."""
from collections import OrderedDict


class LruCache:
    """Keeps at most ``capacity`` entries, evicting the oldest."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries = OrderedDict()

    def get(self, key):
        """Return the cached value for ``key`` or None, marking it as recent."""
        if key not in self.entries:
            return None
        self.entries.move_to_end(key)
        return self.entries[key]

    def put(self, key, value):
        """Insert ``value`` and evict the least recently used entry when full."""
        self.entries[key] = value
        self.entries.move_to_end(key)
        if len(self.entries) > self.capacity:
            self.entries.popitem(last=False)
