"""Reformulate -> generate -> reshape pipeline harness for test-case generation from user stories."""

__version__ = '0.1'
