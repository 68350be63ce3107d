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

from collections.abc import Mapping


class TooManyResult(Exception):
    pass


def _value(item, key):
    if isinstance(item, Mapping):
        return item.get(key, _MISSING)
    return getattr(item, key, _MISSING)


_MISSING = object()


def search_one(data, **attrs):
    """Returns the one element of data that has all attrs given in **attrs

    Elements may be dictionaries or objects (method entries, per-seed records),
    attributes are read with item[key] or getattr accordingly.

    search_one returns None if no result found

    search_one raises TooManyResult if more than one element matches
    """
    result = None
    for i in search(data, **attrs):
        if result is not None:
            raise TooManyResult(f'More than one element matches {attrs}')
        result = i
    return result


def search(data, **attrs):
    """Return generator over the elements of data that have the same attrs as in **attrs

    Only scalar attributes take part in the comparison; an element that lacks
    one of the requested attributes never matches. Without attrs every element
    is returned.
    """
    if not attrs:
        return iter(data)

    def filter_data(item):
        for key, expected in attrs.items():
            value = _value(item, key)
            if value is _MISSING or isinstance(value, (Mapping, list)):
                return False
            if value != expected:
                return False
        return True

    return (item for item in data if filter_data(item))
