"""Bit-plan engine.

Pydantic plan models, scorers and planners, plan files, validation, the
runner that applies a plan weight by weight, and its JSONL run logs.
"""
