"""
Interval-Censored Transformer Hawkes (IC-TH) model.

Each record (point event or censored interval) is encoded by the trigonometric encoding of its time. The encoding of a
censored interval is scaled element-wise by two sigmoid masks computed from its log duration and its log count. A
stack of causal transformer blocks gives one hidden state h_j per record and the expected intensity after record j is
    ξ(t) = softplus_β(w^T h_j + α (t - τ_j))      for t in (τ_j, τ_{j+1}]
where τ_j is the record time and the last segment ends at the cascade horizon.
"""
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from classes.exceptions import CascadeError, CheckpointError, SequenceTooLongError
from datasets.cascade import Cascade, CascadeGroup, CascadeRecord, check_canonical
from models.attention import EncoderLayer
from utils.logger import logger
from utils.misc import torch_dtype
from utils.output import atomic_write
from utils.settings import settings

CHECKPOINT_FORMAT = 'icth-checkpoint'
CHECKPOINT_VERSION = 1

# Lower bound of the expected count under the log
COMPENSATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class ICTHConfig:
    d_model: int = 32
    nb_heads: int = 2
    d_key: int = 16
    d_value: int = 16
    nb_layers: int = 1
    d_inner: int = 64
    linformer_k: int = 0
    max_seq_len: int = 1024
    softplus_beta: float = 1.0
    integration_points: int = 8
    batch_max_records: int = 4096

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ValueError(f'The model dimension should be a positive even number (got {self.d_model})')
        if min(self.nb_heads, self.d_key, self.d_value, self.nb_layers, self.d_inner, self.max_seq_len) < 1:
            raise ValueError('Every layer dimension should be at least 1')
        if not 0 <= self.linformer_k <= self.max_seq_len:
            raise ValueError(f'The projection length should be in [0, {self.max_seq_len}] (got {self.linformer_k})')
        if self.softplus_beta <= 0:
            raise ValueError('The softplus temperature should be > 0')
        if self.integration_points < 2:
            raise ValueError('At least 2 quadrature points per segment are required')

    @property
    def projection_length(self) -> int:
        return self.linformer_k or min(64, self.max_seq_len)

    @classmethod
    def from_settings(cls) -> 'ICTHConfig':
        return cls(**{f.name: getattr(settings, f.name) for f in fields(cls)})

    @classmethod
    def tiny(cls) -> 'ICTHConfig':
        """ The small configuration used by the gradient verification. """
        return cls(d_model=8, nb_heads=1, d_key=4, d_value=4, nb_layers=1, d_inner=16, linformer_k=6, max_seq_len=6,
                   integration_points=4, batch_max_records=6)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, item: Dict[str, Any]) -> 'ICTHConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(item) - known
        if unknown:
            raise CheckpointError(f'Unknown model configuration field(s): {", ".join(sorted(unknown))}')
        return cls(**item)


def encode_time(t: Union[float, torch.Tensor], d_model: int) -> torch.Tensor:
    """
    Trigonometric time encoding. With 1-indexed components: cos(t / 1000^((i-1)/d)) for odd i and
    sin(t / 1000^(i/d)) for even i.

    :param t: Time(s) >= 0, any shape.
    :param d_model: The encoding dimension (even).
    :return: The encoding, shape (*t.shape, d_model).
    """
    t = torch.as_tensor(t, dtype=torch.float64) if not isinstance(t, torch.Tensor) else t
    position = torch.arange(d_model, dtype=t.dtype)
    # 0-indexed p: cos with exponent p / d for even p, sin with exponent (p + 1) / d for odd p
    exponent = (position + position.remainder(2)) / d_model
    angle = t.unsqueeze(-1) / torch.pow(torch.tensor(1000.0, dtype=t.dtype), exponent)
    return torch.where(position.remainder(2) == 0, torch.cos(angle), torch.sin(angle))


@dataclass(frozen=True, eq=False)
class CascadeBatch:
    """ Right-padded tensors of a list of cascades, one row per cascade. """
    times: torch.Tensor
    durations: torch.Tensor
    counts: torch.Tensor
    is_interval: torch.Tensor
    mask: torch.Tensor
    horizons: torch.Tensor

    @classmethod
    def from_cascades(cls, cascades: Sequence[Cascade], max_seq_len: int,
                      dtype: torch.dtype = torch.float64) -> 'CascadeBatch':
        length = max([len(c) for c in cascades] + [1])
        times = torch.zeros(len(cascades), length, dtype=dtype)
        durations = torch.zeros(len(cascades), length, dtype=dtype)
        counts = torch.zeros(len(cascades), length, dtype=dtype)
        is_interval = torch.zeros(len(cascades), length, dtype=torch.bool)
        mask = torch.zeros(len(cascades), length, dtype=torch.bool)

        for i, cascade in enumerate(cascades):
            if len(cascade) == 0:
                raise CascadeError(f'Cascade "{cascade.id}" is empty')
            if len(cascade) > max_seq_len:
                raise SequenceTooLongError(len(cascade), max_seq_len)
            n = len(cascade)
            times[i, :n] = torch.tensor([r.time for r in cascade.records], dtype=dtype)
            durations[i, :n] = torch.tensor([r.duration for r in cascade.records], dtype=dtype)
            counts[i, :n] = torch.tensor([r.count for r in cascade.records], dtype=dtype)
            is_interval[i, :n] = torch.tensor([r.is_interval for r in cascade.records])
            mask[i, :n] = True

        horizons = torch.tensor([c.horizon for c in cascades], dtype=dtype)
        return cls(times, durations, counts, is_interval, mask, horizons)

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def segment_ends(self) -> torch.Tensor:
        """ End of the segment of each record: the next record time, the horizon for the last record. """
        lengths = self.mask.sum(dim=1)
        next_times = torch.cat([self.times[:, 1:], torch.zeros_like(self.times[:, :1])], dim=1)
        is_last = torch.arange(self.times.shape[1]).unsqueeze(0) == (lengths - 1).unsqueeze(1)
        ends = torch.where(is_last, self.horizons.unsqueeze(1), next_times)
        return torch.where(self.mask, ends, self.times)


class ICTH(nn.Module):
    """
    The IC-TH backbone: record encoding, causal Linformer transformer and softplus intensity head.
    """

    def __init__(self, config: Optional[ICTHConfig] = None, dtype: Optional[torch.dtype] = None):
        """
        :param config: The model configuration, from the settings if not set.
        :param dtype: The floating point type of the weights, from the settings if not set.
        """
        super().__init__()
        self.config = config or ICTHConfig.from_settings()
        d_model = self.config.d_model

        # Duration and count masks: context map (tanh) then affine + sigmoid
        self.duration_context = nn.Linear(1, d_model)
        self.duration_mask = nn.Linear(d_model, d_model)
        self.count_context = nn.Linear(1, d_model)
        self.count_mask = nn.Linear(d_model, d_model)

        self.layers = nn.ModuleList([
            EncoderLayer(d_model, self.config.d_inner, self.config.nb_heads, self.config.d_key, self.config.d_value,
                         self.config.projection_length, self.config.max_seq_len)
            for _ in range(self.config.nb_layers)
        ])

        # Intensity head w and trend α
        self.intensity_head = nn.Linear(d_model, 1, bias=False)
        self.alpha = nn.Parameter(torch.zeros(()))

        self.to(dtype or torch_dtype())

    @property
    def dtype(self) -> torch.dtype:
        return self.alpha.dtype

    def batch(self, cascades: Sequence[Cascade]) -> CascadeBatch:
        return CascadeBatch.from_cascades(cascades, self.config.max_seq_len, self.dtype)

    def _softplus(self, x: torch.Tensor) -> torch.Tensor:
        beta = self.config.softplus_beta
        return beta * F.softplus(x / beta)

    def record_masks(self, durations: torch.Tensor, counts: torch.Tensor, is_interval: torch.Tensor) -> torch.Tensor:
        """ Product of the duration and count masks, all-ones for point events. """
        log_durations = torch.log(torch.where(is_interval, durations, torch.ones_like(durations))).unsqueeze(-1)
        log_counts = torch.log1p(torch.where(is_interval, counts, torch.zeros_like(counts))).unsqueeze(-1)
        duration_mask = torch.sigmoid(self.duration_mask(torch.tanh(self.duration_context(log_durations))))
        count_mask = torch.sigmoid(self.count_mask(torch.tanh(self.count_context(log_counts))))
        return torch.where(is_interval.unsqueeze(-1), duration_mask * count_mask, torch.ones_like(duration_mask))

    def encode_record(self, record: CascadeRecord) -> torch.Tensor:
        """
        :param record: One cascade record.
        :return: The masked input vector X_i (d_model,).
        """
        if record.is_interval and not record.duration > 0:
            raise CascadeError('A censored interval should have a positive duration')
        batch = CascadeBatch.from_cascades([Cascade((record,), max(record.end, record.time, 1.0))], 1, self.dtype)
        return self.encode(batch)[0, 0]

    def encode(self, batch: CascadeBatch) -> torch.Tensor:
        return encode_time(batch.times, self.config.d_model) * self.record_masks(batch.durations, batch.counts,
                                                                                 batch.is_interval)

    def hidden_states(self, batch: CascadeBatch) -> torch.Tensor:
        """ :return: The hidden state of every record (B, L, d_model), padding positions included. """
        x = self.encode(batch)
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, batch: CascadeBatch) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        :param batch: The padded cascades.
        :return: The hidden states H (B, L, d_model) and ξ(τ_j) = softplus_β(w^T h_j) (B, L).
        """
        hidden = self.hidden_states(batch)
        return hidden, self._softplus(self.intensity_head(hidden).squeeze(-1))

    def _segment_integrals(self, pre_activation: torch.Tensor, starts: torch.Tensor,
                           ends: torch.Tensor) -> torch.Tensor:
        """ Trapezoidal rule with M points of softplus_β(a + α(t - start)) over [start, end], element-wise. """
        nb_points = self.config.integration_points
        fractions = torch.linspace(0, 1, nb_points, dtype=self.dtype)
        lengths = ends - starts
        values = self._softplus(pre_activation.unsqueeze(-1) + self.alpha * lengths.unsqueeze(-1) * fractions)
        trapezoid = values.sum(dim=-1) - 0.5 * (values[..., 0] + values[..., -1])
        return lengths / (nb_points - 1) * trapezoid

    def log_likelihood(self, cascades: Sequence[Cascade]) -> torch.Tensor:
        """
        IC-TH log-likelihood of each cascade:
            Σ_{intervals} c_i log Ξ(τ_i, τ_{i+1}) + Σ_{events} log ξ(t_i) - Ξ(τ_0, T)

        :param cascades: Canonical cascades.
        :return: The log-likelihoods (len(cascades),), differentiable with respect to the weights.
        """
        for cascade in cascades:
            check_canonical(cascade)

        results = []
        for indices, batch in self._batches(cascades):
            hidden, xi = self(batch)
            pre_activation = self.intensity_head(hidden).squeeze(-1)
            expected = self._segment_integrals(pre_activation, batch.times, batch.segment_ends) * batch.mask

            counted = batch.is_interval & (batch.counts > 0)
            count_terms = torch.where(counted, batch.counts * torch.log(expected.clamp(min=COMPENSATOR_FLOOR)),
                                      torch.zeros_like(expected))
            is_event = batch.mask & ~batch.is_interval
            event_terms = torch.where(is_event, torch.log(xi), torch.zeros_like(xi))
            results.append((indices, count_terms.sum(dim=1) + event_terms.sum(dim=1) - expected.sum(dim=1)))

        return self._restore_order(results, len(cascades))

    def intensity_between(self, cascade: Cascade, t: float) -> float:
        """
        :param cascade: The cascade.
        :param t: A time in (τ_0, T].
        :return: ξ(t) from the last record strictly before t.
        """
        times = [r.time for r in cascade.records]
        if len(times) == 0 or t <= times[0]:
            raise ValueError(f'The intensity is only defined after the first record (t={t})')
        if t > cascade.horizon:
            raise ValueError(f'The intensity is only defined up to the horizon {cascade.horizon:g} (t={t})')
        j = max(i for i, time in enumerate(times) if time < t)
        with torch.no_grad():
            hidden, _ = self(self.batch([cascade]))
            pre_activation = self.intensity_head(hidden[0, j]).squeeze(-1)
            return float(self._softplus(pre_activation + self.alpha * (t - times[j])))

    def compensator(self, cascade: Cascade, a: float, b: float) -> float:
        """
        Ξ(a, b): exact integral of the piecewise-linear interpolation of ξ through the M quadrature points of every
        segment. It is additive over adjacent intervals and equals the trapezoidal rule on full segments.

        :param cascade: The cascade.
        :param a: Start, >= first record time.
        :param b: End, <= horizon.
        """
        if len(cascade) == 0 or not cascade.records[0].time <= a <= b <= cascade.horizon:
            raise ValueError(f'Invalid interval [{a}, {b}] for a cascade starting at its first record and ending at '
                             f'{cascade.horizon:g}')
        with torch.no_grad():
            batch = self.batch([cascade])
            hidden, _ = self(batch)
            pre_activation = self.intensity_head(hidden[0]).squeeze(-1)
            starts, ends = batch.times[0], batch.segment_ends[0]
            nb_points = self.config.integration_points
            fractions = torch.linspace(0, 1, nb_points, dtype=self.dtype)
            offsets = (ends - starts).unsqueeze(-1) * fractions
            node_times = (starts.unsqueeze(-1) + offsets).flatten()
            node_values = self._softplus(pre_activation.unsqueeze(-1) + self.alpha * offsets).flatten()
            return float(_linear_antiderivative(node_times, node_values, b)
                         - _linear_antiderivative(node_times, node_values, a))

    def cascade_embeddings(self, cascades: Sequence[Cascade]) -> torch.Tensor:
        """
        :param cascades: Non-empty cascades.
        :return: The mean hidden state of each cascade (len(cascades), d_model), differentiable.
        """
        results = []
        for indices, batch in self._batches(cascades):
            hidden = self.hidden_states(batch)
            weights = batch.mask.to(hidden.dtype).unsqueeze(-1)
            results.append((indices, (hidden * weights).sum(dim=1) / weights.sum(dim=1)))
        return self._restore_order(results, len(cascades))

    def cascade_embedding(self, cascade: Cascade) -> torch.Tensor:
        return self.cascade_embeddings([cascade])[0]

    def group_embeddings(self, groups: Sequence[Sequence[Cascade]]) -> torch.Tensor:
        """
        :param groups: Lists of cascades (full groups or group halves).
        :return: The mean cascade embedding of each list (len(groups), d_model), differentiable.
        """
        if any(len(g) == 0 for g in groups):
            raise CascadeError('Every group should contain at least one cascade')
        flat = [c for g in groups for c in g]
        owners = torch.tensor([i for i, g in enumerate(groups) for _ in g])
        embeddings = self.cascade_embeddings(flat)
        sums = torch.zeros(len(groups), self.config.d_model, dtype=embeddings.dtype).index_add(0, owners, embeddings)
        sizes = torch.tensor([len(g) for g in groups], dtype=embeddings.dtype).unsqueeze(1)
        return sums / sizes

    def group_embedding(self, group: Union[CascadeGroup, Sequence[Cascade]]) -> torch.Tensor:
        cascades = group.cascades if isinstance(group, CascadeGroup) else group
        return self.group_embeddings([cascades])[0]

    def _batches(self, cascades: Sequence[Cascade]):
        """
        Split the cascades in padded batches sorted by length, each batch holds at most batch_max_records padded
        records (a longer single cascade gets its own batch).
        """
        order = sorted(range(len(cascades)), key=lambda i: (len(cascades[i]), i))
        budget = self.config.batch_max_records
        current: List[int] = []
        for i in order:
            length = max(len(cascades[i]), 1)
            if current and (len(current) + 1) * length > budget:
                yield current, self.batch([cascades[j] for j in current])
                current = []
            current.append(i)
        if current:
            yield current, self.batch([cascades[j] for j in current])

    @staticmethod
    def _restore_order(results: List[Tuple[List[int], torch.Tensor]], size: int) -> torch.Tensor:
        if size == 0:
            raise CascadeError('At least one cascade is required')
        indices = torch.tensor([i for batch_indices, _ in results for i in batch_indices])
        values = torch.cat([v for _, v in results], dim=0)
        return values[torch.argsort(indices)]


def _linear_antiderivative(node_times: torch.Tensor, node_values: torch.Tensor, x: float) -> torch.Tensor:
    """ ∫_{node_times[0]}^x of the linear interpolation through sorted nodes (zero-width cells contribute 0). """
    widths = node_times[1:] - node_times[:-1]
    cells = 0.5 * widths * (node_values[1:] + node_values[:-1])
    cumulative = torch.cat([node_values.new_zeros(1), torch.cumsum(cells, dim=0)])

    x = torch.as_tensor(x, dtype=node_times.dtype)
    cell = int(torch.clamp(torch.searchsorted(node_times, x, right=True) - 1, 0, len(cells) - 1))
    width = widths[cell]
    dx = torch.clamp(x - node_times[cell], min=0)
    slope = (node_values[cell + 1] - node_values[cell]) / width if width > 0 else node_values.new_zeros(())
    return cumulative[cell] + dx * (node_values[cell] + 0.5 * slope * dx)


def icth_loglik(model: ICTH, cascade: Cascade) -> float:
    """ IC-TH log-likelihood of one canonical cascade. """
    with torch.no_grad():
        return float(model.log_likelihood([cascade])[0])


def save_checkpoint(model: ICTH, file_path: Union[str, Path], heads: Optional[Dict[str, nn.Module]] = None) -> None:
    """
    Save the model configuration, its weights and optional heads in one torch container (atomic write).

    :param model: The backbone.
    :param file_path: The output file.
    :param heads: Named heads to save with the backbone (their class needs a `hyperparameters` method).
    """
    container = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': model.config.to_dict(),
        'dtype': str(model.dtype).replace('torch.', ''),
        'tensors': {name: t.detach().clone() for name, t in model.state_dict().items()},
        'heads': {name: {'type': type(head).__name__,
                         'hyperparameters': head.hyperparameters(),
                         'tensors': {n: t.detach().clone() for n, t in head.state_dict().items()}}
                  for name, head in (heads or {}).items()},
    }
    with atomic_write(file_path, binary=True) as f:
        torch.save(container, f)
    logger.info(f'Checkpoint saved in {file_path}')


def load_checkpoint(file_path: Union[str, Path]) -> Tuple[ICTH, Dict[str, nn.Module]]:
    """
    Load a checkpoint written by save_checkpoint.

    :param file_path: The checkpoint file.
    :return: The backbone and its named heads.
    :raise CheckpointError: If the container format, version or tensor shapes don't match this model.
    """
    from models.heads import HEAD_TYPES

    try:
        container = torch.load(file_path, map_location='cpu', weights_only=True)
    except Exception as err:
        raise CheckpointError(f'Can\'t read the checkpoint "{file_path}": {err}') from err

    if not isinstance(container, dict) or container.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f'"{file_path}" is not an IC-TH checkpoint')
    if container.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {container.get("version")} '
                              f'(expected {CHECKPOINT_VERSION})')

    model = ICTH(ICTHConfig.from_dict(container['config']), torch_dtype(container.get('dtype', 'float64')))
    _load_tensors(model, container['tensors'], 'backbone')

    heads = {}
    for name, description in container.get('heads', {}).items():
        head_type = HEAD_TYPES.get(description['type'])
        if head_type is None:
            raise CheckpointError(f'Unknown head type "{description["type"]}"')
        head = head_type(**description['hyperparameters']).to(model.dtype)
        _load_tensors(head, description['tensors'], name)
        heads[name] = head

    logger.debug(f'Checkpoint loaded from {file_path} ({len(heads)} head(s))')
    return model, heads


def _load_tensors(module: nn.Module, tensors: Dict[str, torch.Tensor], name: str) -> None:
    expected = module.state_dict()
    if set(expected) != set(tensors):
        raise CheckpointError(f'Tensor names of "{name}" don\'t match: missing {sorted(set(expected) - set(tensors))},'
                              f' unexpected {sorted(set(tensors) - set(expected))}')
    for tensor_name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[tensor_name].shape):
            raise CheckpointError(f'Shape mismatch for "{name}.{tensor_name}": {tuple(tensor.shape)} in the file, '
                                  f'{tuple(expected[tensor_name].shape)} expected')
    module.load_state_dict(tensors)
