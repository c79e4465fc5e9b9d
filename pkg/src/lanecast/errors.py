"""Exception hierarchy shared by every pipeline stage."""


class LanecastError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class MissingColumn(LanecastError):
    def __init__(self, name, path=None):
        self.name = name
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {name!r}{where}")


class NonContiguousFrames(LanecastError):
    def __init__(self, track_id):
        self.track_id = track_id
        super().__init__(f"track {track_id}: frames are not contiguous")


class UnknownLaneId(LanecastError):
    def __init__(self, track_id, frame, lane_id=None):
        self.track_id, self.frame, self.lane_id = track_id, frame, lane_id
        super().__init__(f"track {track_id}, frame {frame}: unknown lane id {lane_id}")


class AmbiguousManeuver(LanecastError):
    def __init__(self, frame):
        self.frame = frame
        super().__init__(f"lateral position unchanged across lane change at frame {frame}")


class BadDirection(LanecastError):
    def __init__(self, direction):
        super().__init__(f"driving direction must be 1 or 2, got {direction!r}")


class MissingFrame(LanecastError):
    pass


class MissingTrack(LanecastError):
    pass


class EmptyInput(LanecastError):
    pass


class ShapeMismatch(LanecastError, ValueError):
    pass


class BatchTooSmall(LanecastError, ValueError):
    pass


class IndivisibleChannels(LanecastError, ValueError):
    pass


class TooManyHeads(LanecastError, ValueError):
    pass


class BadLabel(LanecastError, ValueError):
    pass


class GraphNotScalar(LanecastError, ValueError):
    pass


class Diverged(LanecastError):
    pass


class EmptyData(LanecastError):
    pass


class EmptyMatrix(LanecastError):
    pass


class BadBinWidth(LanecastError, ValueError):
    pass


class SpecInvalid(LanecastError, ValueError):
    pass
