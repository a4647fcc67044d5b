"""Command-line front end for block g prior variable selection."""
