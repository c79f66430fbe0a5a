import json
import os

from cbfaug.errors import ConfigError
from cbfaug.loader.scenario import ScenarioConfig, load_scenario, validate, write_scenario

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def get_config_path(name, config_file=None):
    """get_config_path

    :param name: registered scenario name
    :param config_file: registry, defaults to config.json at the repository root
    """
    config_file = config_file or os.path.join(ROOT, 'config.json')
    with open(config_file) as f:
        data = json.load(f)
    if name not in data:
        raise ConfigError('config', '{!r} is neither a file nor a registered scenario'.format(name))
    path = data[name]['config_path']
    return path if os.path.isabs(path) else os.path.join(os.path.dirname(os.path.abspath(config_file)), path)


def get_scenario(name, config_file=None):
    """get_scenario

    :param name: a path to a scenario file or a registered scenario name
    :param config_file:
    """
    if os.path.isfile(name):
        return load_scenario(name)
    return load_scenario(get_config_path(name, config_file))
