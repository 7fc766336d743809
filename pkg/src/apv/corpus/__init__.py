"""Bundled example protocols, HL models and payload grammars."""

from importlib import resources
from pathlib import Path

PROTOCOLS = (
    "NSPK", "NSL", "PlainSecret", "KeyDistribution", "KeyDistributionChallenge",
    "SignedChallenge", "ChannelPlain", "ChannelAuthentic", "ChannelConfidential", "ChannelSecure",
)


def path(name: str) -> Path:
    """Filesystem path of a bundled file, e.g. ``path("NSPK.anb")``."""
    return Path(str(resources.files(__name__).joinpath(name)))


def read(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")
