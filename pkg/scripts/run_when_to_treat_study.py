"""Two-period when-to-treat study: T=2, p=10, n=5000, 100 replications, lasso and logistic learners."""

import sys

from _study import main

if __name__ == "__main__":
    sys.exit(main(__doc__, {"T": 2, "p": 10, "estimands": ("when_to_treat(1)", "when_to_treat(2)")}, "when_to_treat.csv"))
