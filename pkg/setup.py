from setuptools import setup, find_packages

setup(
    name='diptv',
    version='0.1',
    packages=find_packages(exclude=['examples', 'examples.*']),
    package_data={'diptv.experiments': ['configs/*.json'], 'diptv.test': ['data/*.png']},
    install_requires=[
        'numpy',
        'Pillow',
        'tensorboardX',
        'matplotlib'
    ],
    extras_require={
        'test': ['pytest', 'torch']
    },
    entry_points={
        'console_scripts': ['diptv=diptv.cli:main']
    }
)
