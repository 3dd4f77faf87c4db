from typing import Any, Iterable, Optional

import torch
from torch import nn, optim


class HeadNN(nn.Module):
    """
    Base of the small networks trained on top of cascade or group embeddings.
    Subclasses define the layers, the criterion and the prediction logic.
    """
    _criterion: nn.Module = None
    _optimizer: Optional[optim.Optimizer] = None

    def configure_optimizer(self, learning_rate: float, extra_parameters: Iterable[nn.Parameter] = ()) -> None:
        """
        Create the Adam optimizer of the head.

        :param learning_rate: The learning rate.
        :param extra_parameters: Other parameters updated with the head (the backbone when it is not frozen).
        """
        self._optimizer = optim.Adam(list(self.parameters()) + list(extra_parameters), lr=learning_rate)

    def loss(self, inputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        return self._criterion(self(inputs), targets)

    def training_step(self, inputs: Any, targets: Any) -> float:
        """
        Define the logic for one training step.

        :param inputs: The embeddings of the batch
        :param targets: The targets of the batch
        :return: The loss value
        """
        if self._optimizer is None:
            raise RuntimeError('The optimizer should be configured before training')

        # Zero the parameter gradients
        self._optimizer.zero_grad()

        # Forward + Backward + Optimize
        loss = self.loss(inputs, targets)
        loss.backward()
        self._optimizer.step()

        return loss.item()

    def predict(self, inputs: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def get_loss_name(self) -> str:
        """
        :return: The name of the loss function (criterion).
        """
        return type(self._criterion).__name__

    def get_optimizer_name(self) -> str:
        """
        :return: The name of the optimiser function.
        """
        return type(self._optimizer).__name__

    def __str__(self) -> str:
        return type(self).__name__
