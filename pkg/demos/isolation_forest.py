"""Score a planted outlier with the isolation forest, then push it through a round of FedDetect.

    python3 demos/isolation_forest.py
"""

import numpy as np

from fedgansim import feddetect

rng = np.random.default_rng(7)
losses = np.append(rng.standard_normal(9), 5.0)  # client 9 is far from the pack

scores = feddetect.anomaly_scores(losses, feddetect.ForestParams(), feddetect.round_rng(0, 11))
for i, (loss, s) in enumerate(zip(losses, scores)):
    mark = "  <- outlier" if s > 0.6 else ""
    print(f"client {i}: loss {loss:+.3f}  score {s:.3f}{mark}")

# One post-warmup round: the flagged client's weight is decayed and the rest renormalized.
state = feddetect.DetectionState.initial(len(losses), warmup=10, decay=0.9)
state, outcome = feddetect.detect_round(state, losses, feddetect.ForestParams(), t=11)
print("flagged:", sorted(outcome.flagged))
print("weights:", np.round(state.weights, 4))
