    def put(self, key, value):
        """Insert ``value`` and evict the least recently used entry when full."""
        self.entries[key] = value
        self.entries.move_to_end(key)
        if len(self.entries) > self.capacity:
            self.entries.popitem(last=False)
