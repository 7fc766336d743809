"""Reader and writer for the Alice-and-Bob protocol notation (``.anb``)."""

from .parser import ParseResult, parse_protocol, parse_protocol_result, parse_term
from .printer import pretty_print

__all__ = ["ParseResult", "parse_protocol", "parse_protocol_result", "parse_term", "pretty_print"]
