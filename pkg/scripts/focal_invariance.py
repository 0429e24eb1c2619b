"""Train on mixed focal lengths with and without the canonical depth target.

Training focal lengths are drawn from [900, 1700] px. Each model is then
evaluated on validation sets rendered at single focal lengths spanning
that range.
"""

from _common import dataset, evaluate, fit, parser, row

from abspose.synth import SynthConfig

EVAL_FOCALS = (900.0, 1146.79, 1499.21, 1683.98)


def main():
    args = parser(__doc__).parse_args()
    train_set = dataset(args.n_train, args.seed, SynthConfig(alpha_range=(900.0, 1700.0)))
    vals = {
        a: dataset(args.n_val, args.seed + 1, SynthConfig(alpha_range=(a, a))) for a in EVAL_FOCALS
    }
    for label, flag in (("metric depth", False), ("canonical depth", True)):
        weights, seconds = fit(args, train_set, canonical_depth=flag)
        print(f"{label}  (trained in {seconds:.0f} s)")
        for alpha, val_set in vals.items():
            print("  " + row(f"alpha = {alpha:g}", evaluate(weights, val_set)), flush=True)


if __name__ == "__main__":
    main()
