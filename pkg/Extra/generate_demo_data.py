import argparse

import numpy as np

from emlasso.simlab import ScenarioConfig, generate_scenario
from emlasso.tabular import write_csv


def generate_demo_dataset(path, scenario="S1", num_rows=1000, seed=2024):
    """Draw one simulated dataset and write it as a CSV ready for `emlasso fit`."""
    config = ScenarioConfig(scenario=scenario, n=num_rows, reps=1, seed=seed)
    table, truth = generate_scenario(config, np.random.default_rng([seed, 0]))
    write_csv(table, path)
    print(f"Dataset generated at: {path}")
    print(f"True effect modifiers: {', '.join(truth.true_ems)}")
    return table


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="Write a simulated (W, A, Y) dataset as CSV")
    ap.add_argument("--out", default="scenario1_demo.csv")
    ap.add_argument("--scenario", default="S1")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    generate_demo_dataset(args.out, args.scenario, args.n, args.seed)
