import os
import pytest
from tileseam.core.diagnose import NO_MISMATCH, ProbeGeometry
from tileseam.core.repro import ReproSettings, TABLE_FILE, reproduce
from tileseam.core.synthdata import SynthSpec, CLASS_NAMES


@pytest.fixture
def settings():
    return ReproSettings(features=(2, 4), levels=1, blocks=1, steps=1, accum_steps=1, tile=8, predict_tile=16,
                         synth=SynthSpec(shape=(12, 12, 28), blob_count=(1, 2), blob_radius=(1.5, 2.5)),
                         train_volumes=1, validation_volumes=1, seed=3,
                         probe=ProbeGeometry(probe=(12, 12, 28), split_offset=4, stride=4),
                         strategies=('instancenorm', 'identity'))


def test_table(settings, tmp_path):
    table = reproduce(str(tmp_path), settings)
    assert table.columns == ['instancenorm', 'identity']
    metrics = [metric for metric, _ in table.rows]
    assert metrics[:len(CLASS_NAMES)] == ['dice-train/{0}'.format(name) for name in CLASS_NAMES]
    assert 'disparity' in metrics and 'max_dist' in metrics
    assert table.cell('max_dist', 'identity') == 0.0
    assert table.cell('mismatch/boundary', 'identity') == NO_MISMATCH
    assert table.cell('max_dist', 'instancenorm') > 0.0
    assert table.cell('disparity', 'instancenorm') == 0.0
    assert table.cell('disparity', 'identity') == 0.0
    with pytest.raises(KeyError):
        table.cell('loss', 'identity')


def test_artifacts(settings, tmp_path):
    reproduce(str(tmp_path), settings)
    assert os.path.isfile(str(tmp_path / TABLE_FILE))
    assert os.path.isfile(str(tmp_path / 'data' / 'train0' / 'image.npy'))
    assert os.path.isfile(str(tmp_path / 'data' / 'validation0' / 'labels.npy'))
    for name in settings.strategies:
        assert os.path.isfile(str(tmp_path / 'models' / name / 'manifest.json'))
