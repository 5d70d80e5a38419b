"""Expected game lengths for two-player Dreidel."""
