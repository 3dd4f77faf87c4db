import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import yaml

from utils.logger import logger


@dataclass(init=False, repr=True, eq=True, order=False, unsafe_hash=False, frozen=False)
class Settings:
    """
    Storing all settings for this program with default values.
    Setting are loaded from (last override first):
        - default values (in this file)
        - configuration file (JSON or YAML, "--config" option)
        - environment variables (ICTH_THREADS)
        - arguments of the command line (with "--" in front)
    The command line layer is parsed by the CLI (runs/cli.py), importing this module never reads sys.argv.
    """

    # ==================================================================================================================
    # ==================================================== General =====================================================
    # ==================================================================================================================

    # Name of the run to save the result ('tmp' for temporary files).
    # If empty nothing is saved in the out directory (outputs explicitly requested with --out are still written).
    run_name: str = ''

    # The seed to use for all random number generators during this run.
    seed: int = 42

    # Maximum number of threads used by torch (ICTH_THREADS environment variable).
    # Bitwise determinism is only guaranteed with 1 thread.
    threads: int = 1

    # The floating point precision of the neural model and the parametric fits: 'float64' or 'float32'.
    dtype: str = 'float64'

    # ==================================================================================================================
    # ============================================== Logging and Outputs ===============================================
    # ==================================================================================================================

    # The minimal logging level to show in the console (see https://docs.python.org/3/library/logging.html#levels).
    logger_console_level: Union[str, int] = 'INFO'

    # The minimal logging level to write in the log file.
    logger_file_level: Union[str, int] = 'DEBUG'

    # If True, a log file is created for each run with a valid run_name.
    logger_file_enable: bool = True

    # If True, add color for pretty console output.
    console_color: bool = True

    # If True, the wall-clock runtime is written in the benchmark reports.
    # Disabled by default because it breaks the byte-identical outputs of two runs with the same seed.
    include_runtime: bool = False

    # ==================================================================================================================
    # =============================================== Parametric models ================================================
    # ==================================================================================================================

    # The parametric model used by "simulate" (true parameters) and "fit" (initial parameters).
    # Family: 'hawkes', 'hawkesn' or 'mbp'. Kernel: 'exponential' or 'power_law'.
    model_family: str = 'hawkes'
    model_kernel: str = 'exponential'

    # Background intensity (events/second). 0 means social-media mode: an immigrant event at t=0 starts the cascade.
    model_mu: float = 0.0

    # Kernel magnitude, decay and shift (the shift is only used by the power-law kernel).
    model_kappa: float = 0.5
    model_theta: float = 1.0
    model_c: float = 1.0

    # Population size of the HawkesN model.
    model_population: int = 1000

    # Number of cascades and observation horizon (seconds) generated by "simulate".
    sim_nb_cascades: int = 100
    sim_horizon: float = 20.0

    # Maximum number of events of one simulated cascade (0 means no limit).
    sim_max_events: int = 0

    # Number of grid steps used to solve the mean intensity Volterra equation over the horizon.
    volterra_grid_size: int = 2048

    # Parametric fitting (L-BFGS on log-parameters).
    fit_max_iterations: int = 2000
    fit_gradient_tolerance: float = 1e-6
    fit_max_redraws: int = 10

    # ==================================================================================================================
    # ================================================== Neural model ==================================================
    # ==================================================================================================================

    # Model and embedding dimension (even).
    d_model: int = 32

    # Number of attention heads and their key / value dimensions.
    nb_heads: int = 2
    d_key: int = 16
    d_value: int = 16

    # Number of transformer blocks and the width of their feed-forward layer.
    nb_layers: int = 1
    d_inner: int = 64

    # Length of the low-rank key/value projection (0 means min(64, max_seq_len)).
    linformer_k: int = 0

    # Maximum number of records per cascade. Longer cascades have to be split by the caller.
    max_seq_len: int = 1024

    # Temperature of the softplus intensity head (not learned).
    softplus_beta: float = 1.0

    # Number of quadrature points per inter-record segment for the compensator.
    integration_points: int = 8

    # Maximum number of padded records in one forward batch (memory budget).
    batch_max_records: int = 4096

    # ==================================================================================================================
    # ============================================ Contrastive pre-training ============================================
    # ==================================================================================================================

    # Temperature of the contrastive loss.
    temperature: float = 0.5

    # Number of groups per contrastive batch (at least 2).
    batch_groups: int = 8

    # Output dimension of the projection head (0 means d_model / 2).
    projection_dim: int = 0

    # Number of pre-training epochs.
    pretrain_epochs: int = 20

    # Learning rate of the Adam optimizer used for pre-training.
    learning_rate: float = 1e-3

    # Maximum gradient norm (clipping).
    gradient_clip: float = 5.0

    # ==================================================================================================================
    # ================================================== Fine-tuning ===================================================
    # ==================================================================================================================

    # The percentage of groups kept for testing only.
    test_ratio: float = 0.5

    # The percentage of the training groups kept for validation (early stopping).
    validation_ratio: float = 0.05

    # The percentage of the training split effectively used (label-fraction study).
    train_fraction: float = 1.0

    # Number of fine-tuning epochs (full batch).
    finetune_epochs: int = 200

    # Learning rate of the fine-tuning heads.
    head_learning_rate: float = 1e-2

    # If True, the backbone is trained together with the head.
    unfreeze: bool = False

    # If True, the best validation state is restored at the end of the fine-tuning.
    early_stopping: bool = True

    # Popularity observation time (seconds). 0 means observation_fraction of each cascade horizon.
    observation_time: float = 0.0
    observation_fraction: float = 0.1

    # Popularity final time (seconds). 0 means the cascade horizon.
    final_time: float = 0.0

    # If True, a Hawkes model fitted on the observed part of the training cascades is reported as baseline.
    parametric_baseline: bool = False

    # Label-fraction study: fractions of the training split and number of repeats per fraction.
    label_fractions: Sequence = (0.2, 0.4, 0.6, 0.8, 1.0)
    label_fraction_repeats: int = 10

    # ==================================================================================================================
    # =================================================== Benchmark ====================================================
    # ==================================================================================================================

    # Number of groups per kernel family and number of cascades per group.
    bench_groups_per_family: int = 20
    bench_cascades_per_group: int = 50

    # Horizon of the synthetic cascades (seconds).
    bench_horizon: float = 50.0

    # The down-sampling probabilities to evaluate.
    bench_p_missing: Sequence = (0.0, 0.5, 0.8, 0.9)

    # Uniform sampling ranges of the kernel parameters (min, max).
    # The power-law kappa range is expressed as branching factor (kernel mass).
    bench_exp_kappa: Sequence = (0.3, 0.9)
    bench_exp_theta: Sequence = (0.5, 5.0)
    bench_pl_kappa: Sequence = (0.3, 0.9)
    bench_pl_theta: Sequence = (0.3, 1.5)
    bench_pl_c: Sequence = (0.5, 2.0)

    # Maximum number of events of one synthetic cascade (keeps tiled cascades under max_seq_len).
    bench_max_events: int = 500

    # Number of neighbours of the k-NN separability metric.
    knn_k: int = 5

    # If True, the benchmark also runs the label-fraction study on the synthetic groups (label_fractions settings).
    bench_label_fractions: bool = False

    # Number of k-means clusters of the group embeddings ("cluster" command).
    nb_clusters: int = 5

    def is_unnamed_run(self) -> bool:
        """ Return True only if the name of the run is NOT set. """
        return len(self.run_name) == 0

    def is_temporary_run(self) -> bool:
        """ Return True only if the name of the run is set and is temporary name. """
        return self.run_name == 'tmp'

    def validate(self) -> None:
        """
        Validate settings.

        :raise AssertionError: If one setting is not valid.
        """

        # General
        assert not re.search('[/:"*?<>|\\\\]+', self.run_name), \
            'Invalid character in run name (should be a valid directory name)'
        assert self.threads >= 1, 'The number of threads should be at least 1'
        assert self.dtype in ('float64', 'float32'), f'Unknown dtype "{self.dtype}"'

        # Logging and Outputs
        possible_log_levels = ('CRITICAL', 'FATAL', 'ERROR', 'WARN', 'WARNING', 'INFO', 'DEBUG', 'NOTSET')
        for level in (self.logger_console_level, self.logger_file_level):
            assert isinstance(level, int) or level.upper() in possible_log_levels, f"Invalid log level '{level}'"

        # Parametric models
        assert self.model_family in ('hawkes', 'hawkesn', 'mbp'), f'Unknown model family "{self.model_family}"'
        assert self.model_kernel in ('exponential', 'power_law'), f'Unknown kernel "{self.model_kernel}"'
        assert self.model_mu >= 0, 'The background intensity should be 0 or more'
        assert self.model_kappa >= 0, 'The kernel magnitude should be 0 or more'
        assert self.model_theta > 0, 'The kernel decay should be strictly positive'
        assert self.model_c > 0, 'The kernel shift should be strictly positive'
        assert self.model_population >= 1, 'The population size should be at least 1'
        assert self.sim_nb_cascades >= 1, 'At least one cascade should be simulated'
        assert self.sim_horizon > 0, 'The simulation horizon should be strictly positive'
        assert self.sim_max_events >= 0, 'The maximum number of simulated events should be 0 or more'
        assert self.volterra_grid_size >= 2, 'The Volterra grid should have at least 2 steps'
        assert self.fit_max_iterations >= 1, 'At least one fitting iteration is required'
        assert self.fit_gradient_tolerance > 0, 'The gradient tolerance should be strictly positive'
        assert self.fit_max_redraws >= 0, 'The number of re-draws should be 0 or more'

        # Neural model
        assert self.d_model > 0 and self.d_model % 2 == 0, 'The model dimension should be a positive even number'
        assert self.nb_heads >= 1, 'At least one attention head is required'
        assert self.d_key >= 1 and self.d_value >= 1, 'Head dimensions should be at least 1'
        assert self.nb_layers >= 1, 'At least one transformer block is required'
        assert self.d_inner >= 1, 'The feed-forward width should be at least 1'
        assert self.max_seq_len >= 1, 'The maximum sequence length should be at least 1'
        assert 0 <= self.linformer_k <= self.max_seq_len, 'The projection length should be lower than max_seq_len'
        assert self.softplus_beta > 0, 'The softplus temperature should be strictly positive'
        assert self.integration_points >= 2, 'At least 2 quadrature points per segment are required'
        assert self.batch_max_records >= self.max_seq_len, 'The batch budget should fit at least one sequence'

        # Contrastive pre-training
        assert self.temperature > 0, 'The contrastive temperature should be strictly positive'
        assert self.batch_groups >= 2, 'A contrastive batch needs at least 2 groups'
        assert self.projection_dim >= 0, 'The projection dimension should be 0 (auto) or more'
        assert self.pretrain_epochs >= 0, 'The number of pre-training epochs should be 0 or more'
        assert self.learning_rate >= 0, 'The learning rate should be 0 or more'
        assert self.gradient_clip > 0, 'The gradient clipping norm should be strictly positive'

        # Fine-tuning
        assert 0 < self.test_ratio < 1, 'The test ratio should be between 0 and 1'
        assert 0 <= self.validation_ratio < 1, 'The validation ratio should be between 0 and 1'
        assert 0 < self.train_fraction <= 1, 'The train fraction should be in ]0, 1]'
        assert self.finetune_epochs >= 1, 'At least one fine-tuning epoch is required'
        assert self.head_learning_rate > 0, 'The head learning rate should be strictly positive'
        assert self.observation_time >= 0, 'The observation time should be 0 (auto) or more'
        assert 0 < self.observation_fraction < 1, 'The observation fraction should be between 0 and 1'
        assert self.final_time >= 0, 'The final time should be 0 (auto) or more'
        assert self.final_time == 0 or self.observation_time < self.final_time, \
            'The observation time should be lower than the final time'
        assert all(0 < f <= 1 for f in self.label_fractions), 'Label fractions should be in ]0, 1]'
        assert self.label_fraction_repeats >= 1, 'At least one repeat per label fraction is required'

        # Benchmark
        assert self.bench_groups_per_family >= 1, 'At least one group per family is required'
        assert self.bench_cascades_per_group >= 2, 'At least two cascades per group are required'
        assert self.bench_horizon > 0, 'The benchmark horizon should be strictly positive'
        assert len(self.bench_p_missing) > 0, 'At least one down-sampling probability is required'
        assert all(0 <= p <= 1 for p in self.bench_p_missing), 'Down-sampling probabilities should be in [0, 1]'
        for name in ('bench_exp_kappa', 'bench_exp_theta', 'bench_pl_kappa', 'bench_pl_theta', 'bench_pl_c'):
            value_range = getattr(self, name)
            assert len(value_range) == 2 and 0 < value_range[0] <= value_range[1], \
                f'The range "{name}" should be a list of 2 positive values (min, max)'
        assert self.bench_exp_kappa[1] < 1 and self.bench_pl_kappa[1] < 1, \
            'The branching factor ranges should stay below 1'
        assert self.bench_max_events >= 0, 'The maximum number of synthetic events should be 0 or more'
        assert self.knn_k >= 1, 'The number of neighbours should be at least 1'
        assert self.nb_clusters >= 1, 'The number of clusters should be at least 1'

    def __init__(self):
        """
        Create the setting object with the default values.
        """
        for f in fields(self):
            self.__dict__[f.name] = f.default

    def update(self, **overrides: Any) -> None:
        """
        Override some settings then validate the whole set.

        :param overrides: The setting names and their new values.
        :raise AssertionError: If a name is unknown or a new value is invalid.
        """
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        assert not unknown, f'Unknown setting(s): {", ".join(sorted(unknown))}'

        for name, value in overrides.items():
            setattr(self, name, value)

        self.validate()

    def load_file(self, file_path: Union[str, Path]) -> None:
        """
        Load settings from a JSON or YAML file (JSON is parsed as YAML).

        :param file_path: The path to the configuration file.
        """
        with open(file_path) as f:
            content = yaml.safe_load(f) or {}
        assert isinstance(content, dict), f'The configuration file "{file_path}" should contain a mapping'
        logger.debug(f'{len(content)} setting(s) loaded from {file_path}')
        self.update(**{name.replace('-', '_'): value for name, value in content.items()})

    def reset(self) -> None:
        """ Restore every default value. """
        for f in fields(self):
            self.__dict__[f.name] = f.default

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def __setattr__(self, name, value) -> None:
        """
        Set an attribute and log the change.

        :param name: The name of the attribute
        :param value: The value of the attribute
        """
        if name not in self.__dict__ or self.__dict__[name] != value:
            logger.debug(f'Setting "{name}" changed from "{self.__dict__.get(name)}" to "{value}".')
            self.__dict__[name] = value

    def __delattr__(self, name):
        raise AttributeError('Removing a setting is forbidden for the sake of consistency.')

    def __str__(self) -> str:
        """
        :return: Human readable description of the settings.
        """
        return 'Settings:\n\t' + '\n\t'.join([f'{name}: {str(value)}' for name, value in asdict(self).items()])


# Singleton setting object
settings = Settings()
