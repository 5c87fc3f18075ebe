"""Estimate causal effects on cause-specific years of life lost under competing risks."""
