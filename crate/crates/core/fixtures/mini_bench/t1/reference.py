def load_settings(path):
    """Load settings from ``path`` into a dict with normalized keys."""
    settings = {}
    for key, value in utils.parse_config(utils.read_lines(path)).items():
        settings[utils.normalize_key(key)] = value
    return settings
