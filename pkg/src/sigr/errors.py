class FormatError(ValueError):
    """A file does not follow the expected binary or text layout."""
