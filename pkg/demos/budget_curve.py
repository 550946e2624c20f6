"""Reliability as the dispatch budget shrinks, on a small random network."""

import numpy as np

from aidnet import parse_scenario, random_toy_dict, search, tighten_budget


def main(seed=950):
    s = parse_scenario(random_toy_dict(np.random.default_rng(seed), tight=True, budget=15.0))
    inc = search(s)
    res = tighten_budget(s, inc, eps_R=100.0)
    print(f"{'budget':>8} {'R':>8} {'cost':>8}")
    for row in res.rows():
        print(f"{row['budget']:8.2f} {row['R']:8.3f} {row['cost']:8.2f}")


if __name__ == "__main__":
    main()
