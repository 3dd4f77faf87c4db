import json
import logging
from dataclasses import replace

import pytest

from datasets.cascade import total_count, validate
from datasets.cascade_io import read_groups, write_groups
from models.icth import ICTH, ICTHConfig, save_checkpoint
from models.parametric import Family, ParametricModel
from runs.cli import COMMAND_HANDLERS, COMMANDS, build_parser, run, str_to_bool
from tests.conftest import make_group
from utils import output
from utils.logger import logger
from utils.output import read_embeddings
from utils.settings import settings

SMALL_MODEL_FLAGS = ['--d-model', '8', '--nb-heads', '2', '--d-key', '4', '--d-value', '4', '--d-inner', '16',
                     '--max-seq-len', '64', '--batch-max-records', '256']


def _simulate(out_file, *extra):
    return run(['simulate', '--out', str(out_file), '--sim-nb-cascades', '5', '--sim-horizon', '5', '--seed', '3',
                *extra])


def test_every_command_has_a_handler():
    assert set(COMMANDS) == set(COMMAND_HANDLERS)


@pytest.mark.parametrize('value, expected', [('true', True), ('Y', True), ('1', True), ('no', False), ('F', False)])
def test_str_to_bool(value, expected):
    assert str_to_bool(value) is expected


def test_flags_accept_dashes_and_underscores():
    parser = build_parser()
    dashes = parser.parse_args(['fit', '--fit-max-iterations', '7'])
    underscores = parser.parse_args(['fit', '--fit_max_iterations', '7'])
    assert dashes.fit_max_iterations == underscores.fit_max_iterations == 7
    assert parser.parse_args(['fit', '--family', 'mbp']).model_family == 'mbp'


def test_simulate_is_reproducible(tmp_path):
    first, second = tmp_path / 'first.jsonl', tmp_path / 'second.jsonl'
    assert _simulate(first) == 0
    assert _simulate(second) == 0
    assert first.read_bytes() == second.read_bytes()

    groups = read_groups(first)
    assert len(groups) == 1
    assert len(groups[0]) == 5
    assert all(c.horizon == 5 and validate(c) == [] for c in groups[0].cascades)


class _RecordList(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.records = []

    def emit(self, record):
        self.records.append(record)


def test_resolved_settings_are_logged_at_info_level(tmp_path):
    handler = _RecordList()
    logger.addHandler(handler)
    try:
        assert _simulate(tmp_path / 'out.jsonl', '--model-kappa', '0.3', '--logger-console-level', 'info') == 0
    finally:
        logger.removeHandler(handler)

    settings_records = [r for r in handler.records if r.getMessage().startswith('Settings:')]
    assert len(settings_records) == 1
    assert settings_records[0].levelno == logging.INFO
    assert 'model_kappa: 0.3' in settings_records[0].getMessage()


def test_simulate_seed_changes_the_output(tmp_path):
    assert _simulate(tmp_path / 'a.jsonl') == 0
    assert run(['simulate', '--out', str(tmp_path / 'b.jsonl'), '--sim-nb-cascades', '5', '--sim-horizon', '5',
                '--seed', '4']) == 0
    assert (tmp_path / 'a.jsonl').read_bytes() != (tmp_path / 'b.jsonl').read_bytes()


def test_config_file(tmp_path):
    config = tmp_path / 'config.yaml'
    config.write_text('sim_nb_cascades: 3\nsim_horizon: 4.0\nseed: 3\n')
    out_file = tmp_path / 'out.jsonl'
    assert run(['simulate', '--config', str(config), '--out', str(out_file)]) == 0
    group = read_groups(out_file)[0]
    assert len(group) == 3
    assert group.cascades[0].horizon == 4.0


def test_unknown_flag():
    assert run(['simulate', '--not-a-flag', '1']) == 1


def test_unknown_command():
    assert run(['teleport']) == 1


def test_missing_required_flag():
    assert run(['simulate']) == 1


def test_invalid_setting_value(tmp_path):
    assert run(['simulate', '--out', str(tmp_path / 'out.jsonl'), '--model-kappa', '-1']) == 1
    assert not (tmp_path / 'out.jsonl').exists()


def test_missing_input(tmp_path):
    assert run(['reconstruct', '--input', str(tmp_path / 'missing.jsonl'), '--out', str(tmp_path / 'out.jsonl')]) == 1


def test_invalid_input_line(tmp_path):
    input_file = tmp_path / 'groups.jsonl'
    input_file.write_text('{"group_id": "g", "cascades": []}\n')
    assert run(['downsample', '--input', str(input_file), '--out', str(tmp_path / 'out.jsonl'),
                '--p-missing', '0.5']) == 1


def test_settings_are_reset_between_runs(tmp_path):
    assert _simulate(tmp_path / 'a.jsonl', '--model-kappa', '0.2') == 0
    assert run(['simulate', '--out', str(tmp_path / 'b.jsonl')]) == 0
    assert settings.model_kappa == 0.5
    assert settings.seed == 42


def test_reconstruct(tmp_path):
    raw_file = tmp_path / 'raw.jsonl'
    raw_file.write_text(json.dumps({'cascade_id': 'c1', 'group_id': 'user', 'label': 'news', 'horizon': 10,
                                    'events': [{'t': 0, 'rtc': 1}, {'t': 2, 'rtc': 3}, {'t': 5, 'rtc': 6}]}) + '\n')
    out_file = tmp_path / 'groups.jsonl'
    assert run(['reconstruct', '--input', str(raw_file), '--out', str(out_file)]) == 0

    group, = read_groups(out_file)
    assert group.group_id == 'user'
    assert group.label == 'news'
    cascade, = group.cascades
    assert validate(cascade) == []
    assert total_count(cascade) == 6


def test_downsample_keeps_the_counts(tmp_path):
    simulated = tmp_path / 'simulated.jsonl'
    assert _simulate(simulated) == 0
    out_file = tmp_path / 'downsampled.jsonl'
    assert run(['downsample', '--input', str(simulated), '--out', str(out_file), '--p-missing', '0.5']) == 0

    before, = read_groups(simulated)
    after, = read_groups(out_file)
    assert [total_count(c) for c in before.cascades] == [total_count(c) for c in after.cascades]
    assert all(validate(c) == [] for c in after.cascades)


@pytest.mark.parametrize('family', ['hawkes', 'mbp'])
def test_fit(tmp_path, family):
    simulated = tmp_path / 'simulated.jsonl'
    assert _simulate(simulated) == 0
    out_file = tmp_path / 'model.json'
    assert run(['fit', '--input', str(simulated), '--out', str(out_file), '--family', family,
                '--fit-max-iterations', '50']) == 0

    model = ParametricModel.from_json(out_file.read_text())
    assert model.family == Family(family)
    assert json.loads(out_file.read_text())['fit_ll'] is not None


def test_pretrain_then_embed(tmp_path):
    groups_file = tmp_path / 'groups.jsonl'
    write_groups([make_group(f'g{i}', 4, shift=0.1 * i, label='ab'[i % 2]) for i in range(4)], groups_file)
    checkpoint = tmp_path / 'model.pt'
    assert run(['pretrain', '--input', str(groups_file), '--out', str(checkpoint), '--pretrain-epochs', '1',
                '--batch-groups', '2', *SMALL_MODEL_FLAGS]) == 0
    assert checkpoint.exists()

    embeddings_file = tmp_path / 'embeddings.tsv'
    assert run(['embed', '--input', str(groups_file), '--checkpoint', str(checkpoint),
                '--out', str(embeddings_file)]) == 0
    table = read_embeddings(embeddings_file)
    assert list(table['group_id']) == ['g0', 'g1', 'g2', 'g3']
    assert list(table['label']) == ['a', 'b', 'a', 'b']
    assert table.shape == (4, 2 + 8)


def test_embed_needs_a_checkpoint(tmp_path):
    groups_file = tmp_path / 'groups.jsonl'
    write_groups([make_group('g', 2)], groups_file)
    assert run(['embed', '--input', str(groups_file), '--out', str(tmp_path / 'embeddings.tsv')]) == 1


def test_cluster(tmp_path):
    groups_file = tmp_path / 'groups.jsonl'
    tags = [{'a'}, {'a', 'b'}, {'c'}, None]
    write_groups([replace(make_group(f'g{i}', 3, shift=0.2 * i), tags=tags[i]) for i in range(4)], groups_file)
    checkpoint = tmp_path / 'model.pt'
    save_checkpoint(ICTH(ICTHConfig(d_model=8, nb_heads=2, d_key=4, d_value=4, d_inner=16, max_seq_len=64)), checkpoint)

    out_file = tmp_path / 'clusters.json'
    assert run(['cluster', '--input', str(groups_file), '--checkpoint', str(checkpoint), '--out', str(out_file),
                '--nb-clusters', '2']) == 0
    report = json.loads(out_file.read_text())
    assert report['nb_clusters'] == 2
    assert sorted(report['assignments']) == ['g0', 'g1', 'g2', 'g3']
    assert report['jaccard']['nb_intra'] + report['jaccard']['nb_inter'] == 6


def test_cluster_more_clusters_than_groups(tmp_path):
    groups_file = tmp_path / 'groups.jsonl'
    write_groups([make_group('g0', 2), make_group('g1', 2, shift=0.1)], groups_file)
    checkpoint = tmp_path / 'model.pt'
    save_checkpoint(ICTH(ICTHConfig(d_model=8, nb_heads=2, d_key=4, d_value=4, d_inner=16, max_seq_len=64)), checkpoint)
    assert run(['cluster', '--input', str(groups_file), '--checkpoint', str(checkpoint),
                '--out', str(tmp_path / 'clusters.json'), '--nb-clusters', '3']) == 1


@pytest.mark.slow
def test_benchmark_with_label_fractions(tmp_path, monkeypatch):
    monkeypatch.setattr(output, 'OUT_DIR', str(tmp_path / 'out'))
    out_file = tmp_path / 'benchmark.json'
    assert run(['benchmark', '--out', str(out_file), '--run-name', 'bench', '--bench-groups-per-family', '6',
                '--bench-cascades-per-group', '3', '--bench-horizon', '10', '--bench-p-missing', '0',
                '--bench-max-events', '30', '--pretrain-epochs', '1', '--batch-groups', '3',
                '--finetune-epochs', '3', '--validation-ratio', '0', '--bench-label-fractions',
                '--label-fractions', '0.5', '--label-fractions', '1.0', '--label-fraction-repeats', '1',
                *SMALL_MODEL_FLAGS]) == 0

    report = json.loads(out_file.read_text())
    assert [r['p_missing'] for r in report['reports']] == [0.0]
    assert [row['fraction'] for row in report['label_fraction_study']] == [0.5, 0.5, 1.0, 1.0]
    table = (tmp_path / 'out' / 'bench' / 'label_fraction_study.tsv').read_text().splitlines()
    assert table[0] == 'fraction\tpretrained\tmean_f1\tstd_f1\tnb_repeats'
    assert len(table) == 5


def test_benchmark_without_label_fractions_by_default(tmp_path):
    out_file = tmp_path / 'benchmark.json'
    assert run(['benchmark', '--out', str(out_file), '--bench-groups-per-family', '3',
                '--bench-cascades-per-group', '2', '--bench-horizon', '5', '--bench-p-missing', '0',
                '--bench-max-events', '20', '--pretrain-epochs', '1', '--batch-groups', '3', '--knn-k', '2',
                *SMALL_MODEL_FLAGS]) == 0
    assert 'label_fraction_study' not in json.loads(out_file.read_text())


def test_gradcheck_tiny(tmp_path, capsys):
    out_file = tmp_path / 'gradcheck.json'
    assert run(['gradcheck', '--tiny', '--loss', 'icth_loglik', '--out', str(out_file)]) == 0
    assert 'max relative error' in capsys.readouterr().out

    report = json.loads(out_file.read_text())
    assert report['max_relative_error'] < 1e-4
    assert set(report['losses']) == {'icth_loglik'}


def test_help():
    assert run(['--help']) == 0
