"""discourse: AI-moderated collaborative discussion server and tooling."""

__version__ = "0.1.0"
