"""Distortion-aware massive MIMO precoding."""
