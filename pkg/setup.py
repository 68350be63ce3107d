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

from os.path import dirname, join, realpath

import setuptools

test_deps = [
    'pytest',
    'allure-pytest',
]
setup_deps = ['setuptools', 'wheel']
extras = {'test': test_deps, 'setup': setup_deps}


def version_build():
    """Version lives in the package, one place to bump"""
    init = join(dirname(realpath(__file__)), 'src', 'srld', '__init__.py')
    with open(init, encoding='utf-8') as f:
        for line in f:
            if line.startswith('__version__'):
                return line.split('=', 1)[1].strip().strip("'")
    raise RuntimeError('__version__ not found in src/srld/__init__.py')


setuptools.setup(
    name="srld",
    version=version_build(),
    description="Stein self-repulsive Langevin dynamics sampler and benchmark harness",
    packages=setuptools.find_packages(where="src"),
    package_dir={"": "src"},
    package_data={"srld": ["templates/*.svg.j2"]},
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.7',
        'pyyaml',
        'jinja2',
    ],
    tests_require=test_deps,
    setup_require=setup_deps,
    extras_require=extras,
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
    scripts=['src/bin/srld'],
)
