"""Tests for the uniedit tools."""
