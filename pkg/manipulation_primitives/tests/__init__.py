"""Tests for the manipulation primitives system."""
