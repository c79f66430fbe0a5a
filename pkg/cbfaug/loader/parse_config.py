# -*- coding: utf-8 -*-
'''
INI scenario files with typed scalars and (nested) lists
'''
from __future__ import absolute_import, print_function

import configparser


def is_int(val_str):
    start_digit = 0
    if(val_str[:1] in ('-', '+')):
        start_digit = 1
    if(len(val_str) <= start_digit):
        return False
    for i in range(start_digit, len(val_str)):
        if(val_str[i] < '0' or val_str[i] > '9'):
            return False
    return True


def is_float(val_str):
    try:
        float(val_str)
    except ValueError:
        return False
    return val_str.lower() not in ('nan', 'inf', '-inf', '+inf', 'infinity')


def is_bool(var_str):
    return var_str in ('True', 'true', 'False', 'false')


def parse_bool(var_str):
    return var_str in ('True', 'true')


def is_list(val_str):
    return len(val_str) >= 2 and val_str[0] == '[' and val_str[-1] == ']'


def split_top_level(sub_str):
    '''Split on commas that are not inside brackets.'''
    items, depth, start = [], 0, 0
    for i, c in enumerate(sub_str):
        if c == '[':
            depth += 1
        elif c == ']':
            depth -= 1
            if depth < 0:
                raise ValueError('unbalanced brackets in {!r}'.format(sub_str))
        elif c == ',' and depth == 0:
            items.append(sub_str[start:i])
            start = i + 1
    if depth != 0:
        raise ValueError('unbalanced brackets in {!r}'.format(sub_str))
    items.append(sub_str[start:])
    return items


def parse_list(val_str):
    sub_str = val_str.strip()[1:-1].strip()
    if not sub_str:
        return []
    return [parse_value_from_string(item.strip()) for item in split_top_level(sub_str)]


def parse_value_from_string(val_str):
    val_str = ' '.join(val_str.split())
    if(is_int(val_str)):
        val = int(val_str)
    elif(is_float(val_str)):
        val = float(val_str)
    elif(is_list(val_str)):
        val = parse_list(val_str)
    elif(is_bool(val_str)):
        val = parse_bool(val_str)
    else:
        val = val_str
    return val


def parse_config(filename):
    config = configparser.ConfigParser()
    if not config.read(filename):
        raise IOError('cannot read config file {}'.format(filename))
    output = {}
    for section in config.sections():
        output[section] = {}
        for key in config[section]:
            val_str = str(config[section][key])
            if(len(val_str) > 0):
                val = parse_value_from_string(val_str)
            else:
                val = None
            output[section][key] = val
    return output


def format_value(val):
    if isinstance(val, bool):
        return 'true' if val else 'false'
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, (list, tuple)):
        return '[' + ', '.join(format_value(v) for v in val) + ']'
    return str(val)


def write_config(sections, filename):
    '''Write a {section: {key: value}} dict so that parse_config reads it back unchanged.'''
    config = configparser.ConfigParser()
    for section, values in sections.items():
        config[section] = {key: format_value(val) for key, val in values.items() if val is not None}
    with open(filename, 'w') as f:
        config.write(f)
    return filename
