"""Train with and without the 2D location/scale inputs and compare MPJPE and MRPE."""

from _common import dataset, evaluate, fit, parser, row

from abspose.training import mean_pose_baseline


def main():
    args = parser(__doc__).parse_args()
    train_set, val_set = dataset(args.n_train, args.seed), dataset(args.n_val, args.seed + 1)
    print(f"mean-pose baseline MPJPE {mean_pose_baseline(train_set, val_set):.1f}")
    for label, flag in (("pose only", False), ("pose + location & scale", True)):
        weights, seconds = fit(args, train_set, use_loc_scale=flag)
        print(row(label, evaluate(weights, val_set), seconds), flush=True)


if __name__ == "__main__":
    main()
