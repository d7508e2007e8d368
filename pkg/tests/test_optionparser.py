import json
import pytest
from tileseam.core.layers import NormKind
from tileseam.utils.optionparser import parse_options, merge_config, InvalidOption, HALO_FROM_RECEPTIVE_FIELD


def docopt_options(**values):
    options = {'gen': True, '--config': None, '--verbosity': None}
    options.update({'--{0}'.format(key.replace('_', '-')): value for key, value in values.items()})
    return options


@pytest.mark.parametrize('key, raw, parsed', [
    ('shape', '16', (16, 16, 16)),
    ('shape', '12, 12, 28', (12, 12, 28)),
    ('blobs', '3', (3, 3)),
    ('blobs', '0,4', (0, 4)),
    ('radius', '2', (2.0, 2.0)),
    ('radius', '1.5,2.5', (1.5, 2.5)),
    ('halo', 'TRF', HALO_FROM_RECEPTIVE_FIELD),
    ('halo', '4', (4, 4, 4)),
    ('warmup', 'never', None),
    ('warmup', '10', 10),
    ('norm', 'BatchRenorm', NormKind.BATCH_RENORM),
    ('format', 'CSV', 'csv'),
    ('checkpoint_every', '5', 5),
    ('tiles', '16,20,24', (16, 20, 24)),
    ('tiles', '64', (64,)),
])
def test_parse(key, raw, parsed):
    assert parse_options(docopt_options(**{key: raw}))[key] == parsed


@pytest.mark.parametrize('key, raw', [
    ('shape', '10'),
    ('shape', '8,8'),
    ('blobs', '1,2,3'),
    ('radius', '0'),
    ('radius', 'big'),
    ('steps', '0'),
    ('lr', '-1'),
    ('threshold', '1.5'),
    ('norm', 'layernorm'),
    ('format', 'xml'),
    ('tiles', '0,16'),
])
def test_invalid(key, raw):
    with pytest.raises(InvalidOption):
        parse_options(docopt_options(**{key: raw}))


def test_commands_pass_through():
    options = parse_options(docopt_options())
    assert options['gen'] is True
    assert 'verbosity' not in options


def test_config_fills_missing_options(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'seed': 4, 'steps': 10}))
    merged = merge_config(docopt_options(config=str(path), seed='7', steps=None))
    assert merged['--seed'] == '7'
    assert merged['--steps'] == 10


@pytest.mark.parametrize('content', ['[1, 2]', '{"seed": ', '{"colour": "red"}', '{"config": "other.json"}'])
def test_bad_config(tmp_path, content):
    path = tmp_path / 'config.json'
    path.write_text(content)
    with pytest.raises(InvalidOption):
        merge_config(docopt_options(config=str(path), seed=None))


def test_missing_config(tmp_path):
    with pytest.raises(InvalidOption):
        merge_config(docopt_options(config=str(tmp_path / 'missing.json')))
