# -*- coding: utf-8 -*-
"""
Exception hierarchy
Every error carries the process exit code the command line reports for it
"""


class EdisonError(Exception):
    """Internal fault"""
    exit_code = 3


class InputError(EdisonError):
    """Unreadable or malformed input: config, files, records"""
    exit_code = 2


class DomainValidationError(EdisonError):
    """Input is well-formed but violates a market rule"""
    exit_code = 4


class ConfigError(InputError):
    pass


class RecordError(InputError):
    pass
