"""Critical traffic scenario generation from temporal scene graphs."""

__version__ = "0.1.0"
