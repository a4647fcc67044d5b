"""Tests for block g variable selection."""
