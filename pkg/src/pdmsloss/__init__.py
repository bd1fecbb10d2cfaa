"""Semantic-loss tracking and recovery for PDMS query reformulation."""
