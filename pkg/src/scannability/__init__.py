"""Visual search time prediction toolkit."""
