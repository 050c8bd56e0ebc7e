"""shrinknet - MLP training on shrinking active sets, with recall."""
