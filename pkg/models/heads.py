"""
Heads trained on top of the IC-TH embeddings.
"""
from typing import Any, Dict

import torch
import torch.nn as nn
import torch.nn.functional as F

from classes.head_nn import HeadNN


class ProjectionHead(HeadNN):
    """
    Two fully connected layers mapping a pooled group-half embedding to the space of the contrastive loss.
    """

    def __init__(self, d_model: int, projection_dim: int = 0):
        """
        :param d_model: The embedding dimension.
        :param projection_dim: The output dimension, d_model / 2 if 0.
        """
        super().__init__()
        self.projection_dim = projection_dim or d_model // 2
        self.fc_layers = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.ReLU(),
            nn.Linear(d_model, self.projection_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_layers(x)

    def hyperparameters(self) -> Dict[str, Any]:
        return {'d_model': self.fc_layers[0].in_features, 'projection_dim': self.projection_dim}


class ClassifierHead(HeadNN):
    """
    One fully connected layer from a group embedding to class logits (softmax in the loss).
    """

    def __init__(self, d_model: int, nb_classes: int):
        super().__init__()
        if nb_classes < 2:
            raise ValueError(f'At least 2 classes are required (got {nb_classes})')
        self.fc = nn.Linear(d_model, nb_classes)
        self._criterion = nn.CrossEntropyLoss()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(x)

    def predict(self, inputs: torch.Tensor) -> torch.Tensor:
        """ :return: The most likely class index of each input. """
        return torch.argmax(self(inputs), dim=1)

    def hyperparameters(self) -> Dict[str, Any]:
        return {'d_model': self.fc.in_features, 'nb_classes': self.fc.out_features}


class PopularityHead(HeadNN):
    """
    One fully connected layer from a truncated cascade embedding to log(1 + number of events after the observation
    time).
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.fc = nn.Linear(d_model, 1)
        self._criterion = nn.MSELoss()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # Flatten [batch_size, 1] to [batch_size]
        return torch.flatten(self.fc(x))

    def predict(self, inputs: torch.Tensor) -> torch.Tensor:
        """ :return: The predicted number of future events (never negative). """
        return torch.expm1(F.relu(self(inputs)))

    def hyperparameters(self) -> Dict[str, Any]:
        return {'d_model': self.fc.in_features}


HEAD_TYPES = {cls.__name__: cls for cls in (ProjectionHead, ClassifierHead, PopularityHead)}
