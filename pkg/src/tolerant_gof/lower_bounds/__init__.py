"""Lower-bound certificates from moment matching."""
