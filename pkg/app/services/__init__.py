"""Constellation, channel, link, detector, angle and harness services."""
