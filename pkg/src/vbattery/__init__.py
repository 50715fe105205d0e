"""Virtual battery simulation toolkit."""
