"""Geo2Vec: signed-distance-field representation learning for geo-entities."""

__version__ = "0.1.0"
