class SelectionException(Exception):
    pass


class DimensionException(SelectionException):
    pass


class TargetIndexException(SelectionException, IndexError):
    pass


class ConfigException(SelectionException):
    pass


class DataException(SelectionException):
    pass


class StateException(SelectionException):
    pass


class NumericException(SelectionException):
    pass


class UndefinedMetricException(SelectionException):
    pass


class DegenerateException(SelectionException):
    pass


class OutputException(SelectionException, OSError):
    pass


class FormatException(SelectionException):
    '''Raised when a binary or text file does not follow its declared format.
    The byte offset at which reading failed is kept on the exception.'''

    def __init__(self, message, offset=None):
        if offset is not None:
            message = "{} (at byte offset {})".format(message, offset)
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionException(FormatException):
    pass
