class TmcnnError(Exception):
    """Base class for package-specific failures."""


class WeightFormatError(TmcnnError):
    """Raised when a weight file is malformed or truncated.

    Carries the byte offset at which decoding failed so the message can
    point at the corruption.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
