"""Queue-based online ad assignment."""
