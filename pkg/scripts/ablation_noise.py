"""Compare training on clean 2D, Gaussian-perturbed 2D and mixture-perturbed 2D.

Detection errors are simulated with a heavy-tailed per-joint mixture. Each
noise model is fitted to those simulated errors and used for on-the-fly
perturbation during training. Evaluation uses freshly perturbed validation
inputs.
"""

import numpy as np
from _common import SPEC, dataset, evaluate, fit, parser, row

from abspose import errormodel


def detector_truth(seed: int) -> errormodel.ErrorModelSet:
    rng = np.random.default_rng(seed)
    return errormodel.ErrorModelSet(
        [
            errormodel.MixtureErrorParams(
                rng.uniform(0.75, 0.92), rng.normal(0, 0.5, 2), rng.uniform(2.0, 6.0, 2)
            )
            for _ in range(SPEC.joint_count)
        ]
    )


def main():
    args = parser(__doc__).parse_args()
    train_set, val_set = dataset(args.n_train, args.seed), dataset(args.n_val, args.seed + 1)
    truth = detector_truth(args.seed + 100)
    errors = errormodel.perturb_pose(
        train_set.pose2d, truth, np.random.default_rng(args.seed + 101)
    )
    errors -= train_set.pose2d
    mixture, _ = errormodel.fit_joints(errors)
    gaussian = errormodel.ErrorModelSet(
        [errormodel.single_gaussian(errors[:, j]) for j in range(SPEC.joint_count)]
    )
    noisy_val = val_set.with_pose2d(
        errormodel.perturb_pose(val_set.pose2d, truth, np.random.default_rng(args.seed + 102))
    )
    for label, model in (("clean 2D", None), ("single Gaussian", gaussian), ("mixture", mixture)):
        weights, seconds = fit(args, train_set, error_model=model)
        print(row(label, evaluate(weights, noisy_val), seconds), flush=True)


if __name__ == "__main__":
    main()
