"""In-memory key/value database."""


class Db:
    """A tiny dictionary-backed database."""

    def __init__(self, dsn):
        self.dsn = dsn
        self.rows = {}

    @classmethod
    def connect(cls, dsn):
        """Open a database handle for ``dsn``."""
        return cls(dsn)

    def insert(self, key, value):
        """Store ``value`` under ``key`` and return the row count."""
        self.rows[key] = value
        return len(self.rows)

    def insert_many(self, items):
        """Insert every ``(key, value)`` pair and return the final row count."""
        count = len(self.rows)
        for key, value in items:
            count = self.insert(key, value)
        return count
