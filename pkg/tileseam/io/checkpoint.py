"""
Checkpoint directories: ``manifest.json`` plus one NPY file per named tensor.

Manifest layout::

    {
      "format": "tileseam-checkpoint",
      "version": 1,
      "config": {...ModelConfig...},
      "norm_kind": "batchrenorm",
      "step_count": 300,
      "norm_states": {"encoder0.block0.norm": {"step_count": 2400, "r_max": 3.0, "d_max": 5.0}, ...},
      "tensors": {"encoder0.block0.conv.weight": {"file": "encoder0.block0.conv.weight.npy", "shape": [...]}, ...}
    }
"""
import json
import logging
from os import makedirs
from os.path import join, isfile, isdir
from dataclasses import replace
from ..core.errors import CheckpointError, ConfigError
from ..core.unet import ModelConfig, build
from ..utils import write_message
from .npy import write_npy, read_npy

MANIFEST = 'manifest.json'
FORMAT = 'tileseam-checkpoint'
VERSION = 1


def _named_tensors(model):
    return model.named_parameters() + model.named_buffers()


def save_checkpoint(model, directory):
    makedirs(directory, exist_ok=True)
    tensors = {}
    for name, array in _named_tensors(model):
        filename = '{0}.npy'.format(name)
        write_npy(join(directory, filename), array)
        tensors[name] = {'file': filename, 'shape': list(array.shape)}
    manifest = {
        'format': FORMAT,
        'version': VERSION,
        'config': model.config.to_dict(),
        'norm_kind': model.config.norm_kind.value,
        'step_count': model.trained_steps,
        'norm_states': {name: {'step_count': layer.state.step_count, 'r_max': layer.state.r_max,
                               'd_max': layer.state.d_max} for name, layer in model.norm_layers()},
        'tensors': tensors
    }
    with open(join(directory, MANIFEST), 'w') as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
    write_message('Saved checkpoint with {0} tensors to {1}'.format(len(tensors), directory), level=logging.DEBUG)
    return directory


def _read_manifest(directory):
    path = join(directory, MANIFEST)
    if not isdir(directory) or not isfile(path):
        raise CheckpointError('{0} is not a checkpoint directory (no {1})'.format(directory, MANIFEST))
    try:
        with open(path) as fp:
            manifest = json.load(fp)
    except ValueError as exc:
        raise CheckpointError('{0}: manifest is not valid JSON ({1})'.format(path, exc))
    if manifest.get('format') != FORMAT or manifest.get('version') != VERSION:
        raise CheckpointError('{0}: unknown checkpoint format {1} version {2}'
                              .format(path, manifest.get('format'), manifest.get('version')))
    return manifest


def load_checkpoint(directory):
    """
    Rebuilds the model described by the manifest and overwrites every named tensor with the stored payload.

    Raises:
        CheckpointError: the manifest is missing or inconsistent, a tensor is missing, or a shape differs
    """
    manifest = _read_manifest(directory)
    try:
        config = ModelConfig.from_dict(manifest['config'])
        model = build(config)
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError('{0}: invalid model configuration ({1})'.format(directory, exc))
    if manifest.get('norm_kind') != config.norm_kind.value:
        raise CheckpointError('{0}: norm kind {1} disagrees with the configuration ({2})'
                              .format(directory, manifest.get('norm_kind'), config.norm_kind.value))
    index = manifest.get('tensors', {})
    expected = dict(_named_tensors(model))
    unexpected = sorted(set(index) - set(expected))
    if unexpected:
        raise CheckpointError('{0}: tensors {1} do not belong to this configuration'.format(directory, unexpected))
    for name, array in expected.items():
        if name not in index:
            raise CheckpointError('{0}: tensor "{1}" is missing from the manifest'.format(directory, name))
        entry = index[name]
        if list(entry.get('shape', [])) != list(array.shape):
            raise CheckpointError('{0}: tensor "{1}" has shape {2} in the manifest, the configuration needs {3}'
                                  .format(directory, name, entry.get('shape'), list(array.shape)))
        path = join(directory, entry['file'])
        if not isfile(path):
            raise CheckpointError('{0}: file {1} of tensor "{2}" is missing'.format(directory, entry['file'], name))
        values = read_npy(path)
        if values.shape != array.shape:
            raise CheckpointError('{0}: tensor "{1}" stored with shape {2}, expected {3}'
                                  .format(directory, name, values.shape, array.shape))
        array[...] = values
    states = manifest.get('norm_states', {})
    for name, layer in model.norm_layers():
        if name in states:
            record = states[name]
            layer.state = replace(layer.state, step_count=int(record['step_count']), r_max=float(record['r_max']),
                                  d_max=float(record['d_max']))
    model.trained_steps = int(manifest.get('step_count', 0))
    return model
