"""How fast FedDetect shrinks a persistently flagged client's weight.

Builds a loss table where client 3 reports ten times the benign loss, runs
it through the offline replay used by ``fgs replay-detect`` and prints the
malicious weight every ten rounds. After r consecutive flags the ratio to a
benign weight is 0.9 ** (r (r + 1) / 2), so it falls off a cliff.

    python3 demos/weight_decay.py
"""

import numpy as np

from fedgansim import cli, feddetect

rounds, n = 60, 4
rng = np.random.default_rng(0)
losses = {}
for t in range(1, rounds + 1):
    row = -0.7 + 0.01 * rng.standard_normal(n)
    row[3] *= 10.0
    losses[t] = row.tolist()

records = cli.replay_detection(losses, n, feddetect.ForestParams(), warmup=10, decay=0.9, seed=0)
for r in records:
    if r.client_id == 3 and r.round % 10 == 0:
        print(f"round {r.round:3d}: flags {r.cum_flags:2d}  weight {r.weight_after:.3e}")
