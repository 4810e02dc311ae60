"""Mini repository used by the repogen test suite."""
