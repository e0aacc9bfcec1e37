"""Three-period study on the staggered design: T=3, p=10, n=2000, 50 replications."""

import sys

from _study import main

ESTIMANDS = ("when_to_treat(1)", "when_to_treat(2)", "when_to_treat(3)", "always_treat_staggered")

if __name__ == "__main__":
    defaults = {"variant": "staggered_dgp", "T": 3, "p": 10, "n": 2000, "replications": 50, "estimands": ESTIMANDS}
    sys.exit(main(__doc__, defaults, "three_period.csv"))
