from typing import Dict, Any

from logging_config import setup_logger

logger = setup_logger(__name__)


class TrainingCallback:
    """Hooks fired by the training harness. Subclass and override what you need."""

    def on_member_start(
        self,
        tag: str,
        seed: int,
        **kwargs
    ):
        logger.info(f"Starting training for {tag} with seed {seed}")

    def on_epoch_end(
        self,
        tag: str,
        epoch: int,
        metrics: Dict[str, Any],
        **kwargs
    ):
        logger.debug(
            f"{tag} epoch {epoch}: train_loss={metrics.get('train_loss'):.5f} "
            f"valid_loss={metrics.get('valid_loss'):.5f} "
            f"valid_acc={metrics.get('valid_accuracy'):.4f} lr={metrics.get('lr'):.2e}"
        )

    def on_member_end(
        self,
        tag: str,
        best_epoch: int,
        stopped_epoch: int,
        best_valid_loss: float,
        **kwargs
    ):
        logger.info(
            f"Finished {tag}: best epoch {best_epoch}, stopped at {stopped_epoch}, "
            f"best valid loss {best_valid_loss:.5f}"
        )

    def on_fold_error(
        self,
        tag: str,
        error: Exception,
        **kwargs
    ):
        logger.error(f"Error in {tag}: {str(error)}")


class RecordingCallback(TrainingCallback):
    """Keeps every event in memory; handy in tests and notebooks."""

    def __init__(self):
        self.events = []

    def on_member_start(self, tag: str, seed: int, **kwargs):
        self.events.append(("member_start", tag, seed))

    def on_epoch_end(self, tag: str, epoch: int, metrics: Dict[str, Any], **kwargs):
        self.events.append(("epoch_end", tag, epoch, dict(metrics)))

    def on_member_end(self, tag: str, best_epoch: int, stopped_epoch: int, best_valid_loss: float, **kwargs):
        self.events.append(("member_end", tag, best_epoch, stopped_epoch, best_valid_loss))

    def on_fold_error(self, tag: str, error: Exception, **kwargs):
        self.events.append(("fold_error", tag, str(error)))
