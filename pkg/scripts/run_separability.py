"""Fit on one half of a synthetic dataset and compare against the entropy baseline on the other."""

import argparse

from tracer.baselines import normalized_entropy_prefix_scores, normalized_entropy_score
from tracer.calibration import SignalMatrix, fit, select_threshold
from tracer.evaluation import auroc, early_warning
from tracer.risk import build_risk_vector, prefix_scores
from tracer.signals import compute_step_signals
from tracer.synth import ScenarioSpec, dataset_statistics, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--density", type=float, default=0.05)
    ap.add_argument("--onset-decay", type=float, default=0.6)
    ap.add_argument("--seeds", type=int, nargs="+", default=[7])
    args = ap.parse_args()

    print("seed  failures  AUROC  base_AUROC  ew20  base_ew20  theta")
    for seed in args.seeds:
        ds = generate(ScenarioSpec(n_episodes=args.episodes, density=args.density,
                                   onset_decay=args.onset_decay, seed=seed))
        half = args.episodes // 2
        train, held = ds.trajectories[:half], ds.trajectories[half:]
        y_train = [t.outcome for t in train]
        rep = fit(train, validation=held)
        base = auroc([normalized_entropy_score(t) for t in held], [t.outcome for t in held])

        thr = select_threshold(SignalMatrix(train).scores(rep.params), y_train)
        thr_base = select_threshold([normalized_entropy_score(t) for t in train], y_train)
        failed = [t for t in held if t.outcome == 1]
        pre = [prefix_scores(build_risk_vector(t, compute_step_signals(t), rep.params), rep.params) for t in failed]
        ew = early_warning(pre, thr).detected_by_early
        ew_base = early_warning([normalized_entropy_prefix_scores(t) for t in failed], thr_base).detected_by_early
        stats = dataset_statistics(ds)
        print(f"{seed:4d}  {stats['failures']:8d}  {rep.validation_auroc:.3f}  {base:10.3f}  "
              f"{ew:.3f}  {ew_base:9.3f}  {rep.params}")


if __name__ == "__main__":
    main()
