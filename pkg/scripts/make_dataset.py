"""Write the default (or hard-mode) synthetic dataset to a directory.

    python scripts/make_dataset.py data/synth
    python scripts/make_dataset.py data/hard --hard --seed 7
"""

import argparse

from breathscreen.synth import SynthConfig, gen_dataset


def main():
    p = argparse.ArgumentParser()
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hard", action="store_true")
    p.add_argument("--clips-per-patient", type=int, default=1)
    a = p.parse_args()
    kw = dict(seed=a.seed, clips_per_patient=a.clips_per_patient)
    cfg = SynthConfig.hard(**kw) if a.hard else SynthConfig(**kw)
    m = gen_dataset(cfg, a.out)
    print(f"wrote {len(m)} clips ({int(m.labels.sum())} positive) to {a.out}")


if __name__ == "__main__":
    main()
