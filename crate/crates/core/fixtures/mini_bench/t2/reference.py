    def insert_many(self, items):
        """Insert every ``(key, value)`` pair and return the final row count."""
        count = len(self.rows)
        for key, value in items:
            count = self.insert(key, value)
        return count
