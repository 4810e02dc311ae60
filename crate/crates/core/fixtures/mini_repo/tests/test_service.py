import os
import tempfile
import unittest

from mini_repo.service import load_settings


class LoadSettingsTest(unittest.TestCase):
    def _write(self, text):
        handle = tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False, encoding="utf-8")
        handle.write(text)
        handle.close()
        self.addCleanup(os.remove, handle.name)
        return handle.name

    def test_normalizes_keys(self):
        path = self._write("Max-Size = 10\n# comment\n\nName = demo\n")
        self.assertEqual(load_settings(path), {"max_size": "10", "name": "demo"})

    def test_empty_file(self):
        path = self._write("")
        self.assertEqual(load_settings(path), {})


if __name__ == "__main__":
    unittest.main()
