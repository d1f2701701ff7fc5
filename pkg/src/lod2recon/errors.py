"""Exception hierarchy shared by all reconstruction stages."""


class ReconstructionError(Exception):
    """Base class for every error raised by lod2recon."""


class DimensionMismatch(ReconstructionError):
    pass


class MissingGeoref(ReconstructionError):
    pass


class MalformedFile(ReconstructionError):
    """Input file violates its format; ``offset`` is the byte position."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class SingularTransform(ReconstructionError):
    pass


class IoFailure(ReconstructionError):
    pass


class DegeneratePolygon(ReconstructionError):
    pass


class NotAdjacent(ReconstructionError):
    pass


class InvalidParams(ReconstructionError):
    pass


class InsufficientData(ReconstructionError):
    pass


class EmptyInputs(ReconstructionError):
    pass


class EmptyFootprint(ReconstructionError):
    pass


class InvalidModel(ReconstructionError):
    pass


class EmptyReference(ReconstructionError):
    pass


class OverlapError(ReconstructionError):
    pass


class ConfigOutOfRange(ReconstructionError):
    pass


class InputTooLarge(ReconstructionError):
    pass


class StageError(ReconstructionError):
    """Wraps a failure inside one pipeline stage with the segment id."""

    def __init__(self, stage, segment_id, cause):
        self.stage = stage
        self.segment_id = segment_id
        self.cause = cause
        super().__init__(f"stage {stage!r} failed on segment {segment_id}: {cause}")
