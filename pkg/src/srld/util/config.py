# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Utilities to read experiment documents and merge overrides into them"""

from collections.abc import Mapping
from typing import Any, Optional, Sequence, Tuple

import yaml


class DocumentError(Exception):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        self.message = message
        super().__init__(f'{path}:{line}: {message}' if line else f'{path}: {message}')


def update(current_config: dict, changes: Mapping, skip_none: bool = True) -> dict:
    """
    If the old and new values are dictionaries, we try to update, otherwise we replace.
    None values in changes mean "not given" (unset command line flags) and are skipped.
    Current config is updated, not copied.
    """
    for key, value in changes.items():
        if value is None and skip_none:
            continue
        if (
            isinstance(value, Mapping)
            and key in current_config
            and isinstance(current_config[key], Mapping)
        ):
            current_config[key] = update(dict(current_config[key]), value, skip_none)
            continue
        current_config[key] = value
    return current_config


def load_document(path) -> Tuple[Any, Optional[yaml.Node]]:
    """Read a JSON or YAML document.

    Returns the parsed data and the composed node tree, the latter is used to find
    the line of a field when validation fails.
    """
    try:
        with open(path, 'r', encoding='utf-8') as stream:
            text = stream.read()
    except OSError as error:
        raise DocumentError(path, None, error.strerror or str(error)) from error
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as error:
        line = error.problem_mark.line + 1 if error.problem_mark is not None else None
        raise DocumentError(path, line, error.problem or str(error)) from error
    return data, node


def line_of(node: Optional[yaml.Node], field_path: Sequence) -> Optional[int]:
    """1-based line of the node at field_path (keys and list indexes), or of its nearest parent"""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in field_path:
        child = None
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                if key_node.value == str(part):
                    child = value_node
                    line = key_node.start_mark.line + 1
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int):
            if 0 <= part < len(node.value):
                child = node.value[part]
                line = child.start_mark.line + 1
        if child is None:
            break
        node = child
    return line
