"""Command-line entry point for feature extraction."""

import argparse
import logging
import sys

from .extract import ExtractionJob, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bamp-extract",
        description="Extract frozen vision-transformer features into the "
                    "binary embedding format.",
    )
    parser.add_argument("--dataset", required=True,
                        choices=["folder", "cifar100", "fgvcaircraft"])
    parser.add_argument("--root", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument("--backbone", default="vit_b16",
                        choices=["vit_b16", "vit_tiny_test"])
    parser.add_argument("--weights", default="pretrained",
                        help="pretrained | random | path to a state_dict")
    parser.add_argument("--resolution", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--download", action="store_true",
                        help="let torchvision fetch the dataset if missing")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    job = ExtractionJob(
        dataset=args.dataset,
        root=args.root,
        output=args.out,
        backbone=args.backbone,
        weights=args.weights,
        resolution=args.resolution,
        batch_size=args.batch_size,
        device=args.device,
        seed=args.seed,
        download=args.download,
    )
    try:
        written, skipped = extract(job)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"extraction failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {written} records to {args.out} ({skipped} skipped)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
