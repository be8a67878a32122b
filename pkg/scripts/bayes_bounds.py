#!/usr/bin/env python3
"""Print Bayes-optimal accuracies of the synthetic generator.

The generator labels a meme positive for a sub-category only when both
the text keyword and the image motif are present, so a single modality
can never reach the joint ceiling. This script enumerates the exact
optimum per modality for a given cue probability, which is useful when
choosing generator settings that leave fusion measurable headroom.

Usage: scripts/bayes_bounds.py [--keyword-prob P] [--motif-prob P]
"""

import argparse

from memefuse.synth import SynthSpec, bayes_accuracies


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--keyword-prob", type=float, default=0.65)
    parser.add_argument("--motif-prob", type=float, default=0.65)
    args = parser.parse_args()
    spec = SynthSpec(keyword_prob=args.keyword_prob,
                     motif_prob=args.motif_prob)
    text_acc, image_acc, joint_acc = bayes_accuracies(spec)
    print(f"keyword_prob={spec.keyword_prob} motif_prob={spec.motif_prob}")
    print(f"text-only Bayes accuracy:  {text_acc:.4f}")
    print(f"image-only Bayes accuracy: {image_acc:.4f}")
    print(f"bi-modal Bayes accuracy:   {joint_acc:.4f}")


if __name__ == "__main__":
    main()
