class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class FieldFormatError(ValueError):
    """Malformed FieldFile. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BoundaryAmbiguityError(ValueError):
    def __init__(self, crossings):
        super().__init__(f"expected exactly one threshold crossing, found {crossings}")
        self.crossings = crossings


class RealizationError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"realization {index} failed: {cause}")
        self.index = index
