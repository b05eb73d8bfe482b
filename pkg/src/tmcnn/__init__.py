"""Junction/terminal detection in labyrinthine stripe images.

Two stages: a rotation-swept bank of masked normalized cross-correlation
templates proposes candidate points, and a small patch CNN (pure numpy)
re-classifies each candidate as junction, terminal, or false detection.
Also ships a synthetic labyrinth generator with a skeleton-based ground
truth oracle, an evaluation harness, an HTTP annotation service, and a CLI.
"""

__version__ = "0.1.0"
