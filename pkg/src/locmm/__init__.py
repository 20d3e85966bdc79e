"""Local-entropy minimax estimation for the Gaussian sequence model."""
