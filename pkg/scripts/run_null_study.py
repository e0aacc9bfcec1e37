"""Null-effect study: the treatment coefficient is zero, so every effect estimand has truth 0."""

import sys

from _study import main

ESTIMANDS = (
    "when_to_treat(1)", "when_to_treat(2)", "mixture(10)", "mixture(01)", "mixture(11)", "always_treat_strong",
)

if __name__ == "__main__":
    defaults = {"T": 2, "p": 10, "n": 5000, "treatment_effect": 0.0, "estimands": ESTIMANDS}
    sys.exit(main(__doc__, defaults, "null_effect.csv"))
