"""Tests for glat."""
