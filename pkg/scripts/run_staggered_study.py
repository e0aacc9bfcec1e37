"""Staggered-compliance always-treat study: T=2, p=10, n=5000, 100 replications."""

import sys

from _study import main

if __name__ == "__main__":
    sys.exit(
        main(
            __doc__,
            {"variant": "staggered_dgp", "T": 2, "p": 10, "estimands": ("always_treat_staggered",)},
            "staggered.csv",
        )
    )
