"""Exception types raised across the package.

Every parser and stage raises a subclass of :class:`SvsError`, so callers can
catch one type while tests can still assert on the precise failure.
"""


def _rebuild(cls, message, state):
    exc = cls.__new__(cls)
    Exception.__init__(exc, message)
    exc.__dict__.update(state)
    return exc


class SvsError(ValueError):
    """Base class for all typed failures."""

    def __reduce__(self):
        # subclasses take structured arguments, so rebuild from the message
        # and attributes; keeps errors intact across worker processes
        return _rebuild, (type(self), str(self), dict(self.__dict__))


# manifests / corpus


class MalformedLine(SvsError):
    def __init__(self, line_no):
        super().__init__(f"malformed manifest line {line_no}")
        self.line_no = line_no


class DuplicateKey(SvsError):
    def __init__(self, key):
        super().__init__(f"duplicate key {key!r}")
        self.key = key


class MissingFile(SvsError, FileNotFoundError):
    def __init__(self, name):
        super().__init__(f"missing file {name!r}")
        self.name = name


class KeyMismatch(SvsError):
    def __init__(self, utt_id, file):
        super().__init__(f"utterance {utt_id!r} not found in {file!r}")
        self.utt_id = utt_id
        self.file = file


class EmptyCorpus(SvsError):
    pass


# MIDI


class SmfError(SvsError):
    """Any failure to decode a Standard MIDI File."""


class NotSmf(SmfError):
    pass


class UnsupportedFormat(SmfError):
    def __init__(self, fmt):
        super().__init__(f"unsupported SMF format {fmt}")
        self.fmt = fmt


class UnmatchedNoteOn(SmfError):
    def __init__(self, pitch, tick):
        super().__init__(f"note-on for pitch {pitch} at tick {tick} never released")
        self.pitch = pitch
        self.tick = tick


class TruncatedChunk(SmfError):
    pass


# labels


class LabelError(SvsError):
    """Any failure to decode a label file."""


class MalformedTriplet(LabelError):
    def __init__(self, line_no):
        super().__init__(f"malformed label triplet on line {line_no}")
        self.line_no = line_no


class OverlappingEntries(LabelError):
    def __init__(self, utt_id):
        super().__init__(f"overlapping label entries in {utt_id!r}")
        self.utt_id = utt_id


class NonpositiveDuration(LabelError):
    def __init__(self, utt_id, index):
        super().__init__(f"label entry {index} of {utt_id!r} has nonpositive duration")
        self.utt_id = utt_id
        self.index = index


class EmptyF0Track(SvsError):
    pass


# audio / dsp


class NotRiff(SvsError):
    pass


class UnsupportedCodec(SvsError):
    def __init__(self, code):
        super().__init__(f"unsupported WAV codec 0x{code:04x}")
        self.code = code


class EmptySignal(SvsError):
    pass


class ShapeMismatch(SvsError):
    pass


class BadRange(SvsError):
    pass


class BadDump(SvsError):
    def __init__(self, file, reason=""):
        super().__init__(f"bad feature dump {file!r}" + (f": {reason}" if reason else ""))
        self.file = file


# featurization


class RestHasNoPitch(SvsError):
    pass


class EmptyLabels(SvsError):
    pass


class NoOverlappingNote(SvsError):
    def __init__(self, index):
        super().__init__(f"label entry {index} overlaps no note")
        self.index = index


class NoteTooShort(SvsError):
    pass


# metrics


class EmptyInput(SvsError):
    pass


class DimMismatch(SvsError):
    pass


# pipeline


class ConfigError(SvsError):
    pass


class StageFailed(SvsError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class AllFiltered(SvsError):
    pass


class UnpairedUtterance(SvsError):
    def __init__(self, utt_id):
        super().__init__(f"no hypothesis for utterance {utt_id!r}")
        self.utt_id = utt_id


class MissingArtifact(SvsError, FileNotFoundError):
    def __init__(self, name):
        super().__init__(f"missing artifact {name!r}")
        self.name = name
