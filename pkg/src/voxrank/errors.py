"""Exception types shared across the pipeline."""


class VoxrankError(Exception):
    """Base class for all errors raised by this package."""


class FileUnreadable(VoxrankError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"cannot read {self.path}: {reason}" if reason else f"cannot read {self.path}")


class MalformedRecord(VoxrankError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed record on line {line_no}: {reason}")


class DuplicateProductId(VoxrankError):
    def __init__(self, product_id: str):
        self.product_id = product_id
        super().__init__(f"duplicate product_id {product_id!r}")


class MalformedLexicon(VoxrankError):
    pass


class EmptyQuery(VoxrankError):
    def __init__(self, text: str = ""):
        self.text = text
        super().__init__("query normalizes to zero tokens")


class InvalidTtl(VoxrankError):
    pass


class CorruptSnapshot(VoxrankError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"corrupt snapshot at line {line_no}: {reason}")


class EmptyTrainingSet(VoxrankError):
    pass


class NonFiniteLoss(VoxrankError):
    pass


class InvalidEvent(VoxrankError):
    pass


class DuplicateEventId(VoxrankError):
    def __init__(self, event_id: str):
        self.event_id = event_id
        super().__init__(f"duplicate event_id {event_id!r}")


class CustomerMismatch(VoxrankError):
    pass


class NoEvaluableSessions(VoxrankError):
    pass


class UnknownVersion(VoxrankError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"unknown model version {version!r}")


class NotEvaluated(VoxrankError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"model version {version} has no evaluation metrics")


class RegistryUnavailable(VoxrankError):
    pass
