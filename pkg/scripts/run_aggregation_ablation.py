"""Held-out AUROC of step-composite and aggregation variants, each calibrated on the same grid."""

import argparse

import numpy as np

from tracer.calibration import GridSpec, SignalMatrix, fit
from tracer.synth import ScenarioSpec, generate


def _additive(self, alpha, beta, gamma):
    r = self.u + alpha * self.rep + beta * self.gap_agent + gamma * self.gap_user
    r[self.pad] = -np.inf
    return r


VARIANTS = {
    "max composite, tail mix": ({}, None),
    "max composite, mean only": ({"k": (1.0,), "w_values": (0.0,), "pilot_w": 0.0}, None),
    "max composite, max only": ({"w_values": (1.0,), "pilot_w": 1.0}, None),
    "additive composite, tail mix": ({}, _additive),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--cascade-density", type=float, default=0.0)
    ap.add_argument("--failure-extension", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    ds = generate(ScenarioSpec(n_episodes=args.episodes, cascade_density=args.cascade_density,
                               failure_extension=args.failure_extension, seed=args.seed))
    half = args.episodes // 2
    train, held = ds.trajectories[:half], ds.trajectories[half:]
    original = SignalMatrix.step_risks
    for name, (overrides, composite) in VARIANTS.items():
        SignalMatrix.step_risks = composite or original
        try:
            rep = fit(train, GridSpec(**overrides), validation=held)
        finally:
            SignalMatrix.step_risks = original
        print(f"{name:30s} AUROC {rep.validation_auroc:.3f}  {rep.params}")


if __name__ == "__main__":
    main()
