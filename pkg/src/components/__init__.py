"""Text table components for the command-line interface."""
