"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures to distinct process exit statuses without a lookup table.
"""


class MadvexError(Exception):
    exit_code = 1


class MalformedEncoding(MadvexError):
    exit_code = 3


class InvalidModule(MadvexError):
    exit_code = 3


class MalformedModule(MadvexError):
    exit_code = 3


class UnsupportedOpcode(MalformedModule):
    def __init__(self, opcode, offset):
        super().__init__(f"unsupported opcode 0x{opcode:02x} at offset {offset}")
        self.opcode = opcode
        self.offset = offset


class NotInstrumentable(MadvexError):
    exit_code = 4


class InvalidDensity(MadvexError):
    exit_code = 5


class InvalidConfig(MadvexError):
    exit_code = 5


class EmptyBinary(MadvexError):
    exit_code = 3


class MaskViolation(MadvexError):
    exit_code = 8


class NothingEditable(MadvexError):
    exit_code = 8


class ShapeMismatch(MadvexError):
    exit_code = 6


class IncompatibleModel(MadvexError):
    exit_code = 6


class DegenerateDataset(MadvexError):
    exit_code = 7


class EmptyCorpus(MadvexError):
    exit_code = 7


class DuplicateId(MadvexError):
    exit_code = 7


class ExternalToolError(MadvexError):
    exit_code = 9
