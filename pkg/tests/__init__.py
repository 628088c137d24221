"""Test package for strip-mlp."""
