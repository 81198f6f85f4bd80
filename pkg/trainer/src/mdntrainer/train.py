"""Training loop and CLI: Adam on the weighted mixture NLL, MDNW export."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

import numpy as np
import torch

from .dataset import Dataset, collate, load_dataset, split_by_group
from .model import MdnNet, NetSpec, mdn_loss
from .weights_io import WeightsFile, write_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    alpha: float = 0.0                # L2 coefficient on the variance vector
    components: int = 2
    seed: int = 0
    hidden: tuple[int, int, int, int, int] = (256, 128, 256, 256, 128)
    deterministic: bool = True
    val_fraction: float = 0.1
    include_failed: bool = False

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs) <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.components not in (2, 3):
            raise ValueError("components must be 2 or 3")


def metadata_for(dataset: Dataset, config: TrainConfig) -> dict:
    """Weights metadata: normalization copied verbatim from the manifest."""
    m = dataset.manifest
    return {"K": config.components, "G": dataset.slots,
            "hidden": list(config.hidden),
            "grid": dict(m["grid"]), "norms": dict(m["norms"]),
            "bounds": dict(m["bounds"])}


def batch_to_tensors(batch: dict) -> dict:
    out = {k: torch.from_numpy(v) for k, v in batch.items()
           if k != "slot_mask"}
    out["slot_mask"] = torch.from_numpy(batch["slot_mask"])
    return out


def evaluate_nll(net: MdnNet, records, slots: int,
                 batch_size: int = 64) -> float:
    """Mean weighted NLL (alpha = 0) over a record list."""
    net.eval()
    losses = []
    with torch.no_grad():
        for i in range(0, len(records), batch_size):
            batch = batch_to_tensors(collate(records[i:i + batch_size], slots))
            out = net(batch["grid"], batch["scalars"])
            losses.append(float(mdn_loss(out, batch, alpha=0.0))
                          * len(records[i:i + batch_size]))
    return sum(losses) / len(records)


@dataclass
class TrainResult:
    net: MdnNet
    train_nll: list
    val_nll: list
    batch_losses: list


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    if config.deterministic:
        torch.manual_seed(config.seed)
        torch.set_num_threads(1)
    else:
        torch.manual_seed(config.seed)

    records = [r for r in dataset.records
               if config.include_failed or not r.failed]
    if not records:
        raise ValueError("dataset holds no usable records")
    train_recs, val_recs = split_by_group(
        Dataset(dataset.manifest, records), config.val_fraction)
    if not train_recs:
        train_recs, val_recs = records, []

    spec = NetSpec.from_metadata(metadata_for(dataset, config))
    net = MdnNet(spec)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    rng = np.random.default_rng(config.seed)
    slots = dataset.slots
    train_curve, val_curve, batch_losses = [], [], []
    for epoch in range(config.epochs):
        net.train()
        order = rng.permutation(len(train_recs))
        for i in range(0, len(order), config.batch_size):
            chunk = [train_recs[j] for j in order[i:i + config.batch_size]]
            batch = batch_to_tensors(collate(chunk, slots))
            optimizer.zero_grad()
            loss = mdn_loss(net(batch["grid"], batch["scalars"]), batch,
                            config.alpha)
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
        train_curve.append(evaluate_nll(net, train_recs, slots))
        val_curve.append(evaluate_nll(net, val_recs, slots)
                         if val_recs else float("nan"))
        log.info("epoch %d: train NLL %.4f, val NLL %.4f", epoch,
                 train_curve[-1], val_curve[-1])
    return TrainResult(net=net, train_nll=train_curve, val_nll=val_curve,
                       batch_losses=batch_losses)


def export(net: MdnNet, metadata: dict, path) -> None:
    write_weights(WeightsFile(metadata=metadata,
                              tensors=net.export_tensors()), path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdn-train",
        description="Train the action-mixture network on a generated dataset "
                    "and export an MDNW weights file.")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--components", type=int, default=2, choices=[2, 3])
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--alpha", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    parser.add_argument("--hidden", type=int, nargs=5,
                        default=[256, 128, 256, 256, 128],
                        metavar=("N1", "N2", "N3", "N4", "N5"))
    parser.add_argument("--include-failed", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        dataset = load_dataset(args.dataset)
        config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                             epochs=args.epochs, alpha=args.alpha,
                             components=args.components, seed=args.seed,
                             hidden=tuple(args.hidden),
                             include_failed=args.include_failed)
        result = train(dataset, config)
        export(result.net, metadata_for(dataset, config), args.out)
        sys.stdout.write(json.dumps(
            {"weights": args.out,
             "epochs": config.epochs,
             "final_train_nll": result.train_nll[-1],
             "final_val_nll": result.val_nll[-1]}) + "\n")
        return 0
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
