"""Authentication-protocol workbench: AnB models to attacks, test cases and replays."""

__version__ = "0.1.0"
