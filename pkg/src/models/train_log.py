"""Per-epoch training metrics and their CSV / JSON artifacts."""

from dataclasses import dataclass, field

from src.helpers import write_csv, write_json

CSV_COLUMNS = ("epoch", "train_loss", "train_acc", "eval_acc", "cum_mflops")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    cum_flops: int

    @property
    def cum_mflops(self):
        return self.cum_flops / 1e6

    def row(self):
        return (self.epoch, self.train_loss, self.train_acc, self.eval_acc, self.cum_mflops)


@dataclass
class TrainLog:
    label: str = ""
    epochs: list = field(default_factory=list)
    cum_flops: int = 0
    wall_clock: float = 0.0
    layer_modes: list = field(default_factory=list)

    @property
    def final_eval_acc(self):
        return self.epochs[-1].eval_acc if self.epochs else float("nan")

    @property
    def losses(self):
        return [e.train_loss for e in self.epochs]

    def summary(self):
        return {
            "label": self.label,
            "epochs": len(self.epochs),
            "final_train_loss": self.epochs[-1].train_loss if self.epochs else None,
            "final_train_acc": self.epochs[-1].train_acc if self.epochs else None,
            "final_eval_acc": self.final_eval_acc if self.epochs else None,
            "cum_flops": self.cum_flops,
            "cum_mflops": self.cum_flops / 1e6,
            "wall_clock_s": self.wall_clock,
            "layer_modes": list(self.layer_modes),
            "history": [dict(zip(CSV_COLUMNS, e.row())) for e in self.epochs],
        }

    def write_csv(self, path):
        write_csv(path, CSV_COLUMNS, [e.row() for e in self.epochs])

    def write_summary(self, path, config=None):
        data = self.summary()
        if config is not None:
            data["config"] = config.to_dict()
        write_json(path, data)
