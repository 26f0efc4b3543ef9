"""Embed discrete-feature entities by ranking positive pairs above sampled negatives."""
