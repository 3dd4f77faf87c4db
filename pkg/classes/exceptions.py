"""
Exceptions raised by the library. Invalid user inputs derive from ValueError (the CLI reports them as validation
errors), failures during a computation derive from RuntimeError.
"""
from typing import Optional


class CascadeError(ValueError):
    """ A cascade, a record or a raw event stream breaks the data model. """


class CascadeFormatError(ValueError):
    """ A line of a JSON-lines file can't be parsed. """

    def __init__(self, line_number: int, message: str, file_path: Optional[str] = None):
        self.line_number = line_number
        location = f'{file_path}:{line_number}' if file_path else f'line {line_number}'
        super().__init__(f'Invalid cascade file content at {location}: {message}')


class DuplicateGroupError(CascadeFormatError):
    """ Two groups of the same dataset share an identifier. """

    def __init__(self, line_number: int, group_id: str, file_path: Optional[str] = None):
        self.group_id = group_id
        super().__init__(line_number, f'duplicate group_id "{group_id}"', file_path)


class SequenceTooLongError(ValueError):
    """ A cascade has more records than the model accepts. """

    def __init__(self, length: int, max_length: int):
        super().__init__(f'Cascade with {length} records is longer than the maximum sequence length ({max_length}). '
                         f'Split it into chunks of at most {max_length} records or increase "max_seq_len".')


class FitError(RuntimeError):
    """ The parametric fit can't start from a finite log-likelihood. """


class TrainingDivergenceError(RuntimeError):
    """ The training loss became NaN or infinite. """

    def __init__(self, epoch: int, batch: Optional[int], last_finite_loss: Optional[float]):
        self.epoch = epoch
        self.batch = batch
        self.last_finite_loss = last_finite_loss
        super().__init__(f'Training diverged at epoch {epoch} batch {batch} (last finite loss: {last_finite_loss}). '
                         f'Try a lower learning rate or a lower gradient clipping norm.')


class CheckpointError(ValueError):
    """ A checkpoint file is not compatible with this version of the model. """
