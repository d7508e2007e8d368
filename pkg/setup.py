from setuptools import setup, find_packages
from os.path import join, dirname

THIS_DIR = dirname(__file__)

with open(join(THIS_DIR, 'README.md'), encoding='utf-8') as file:
    long_description = file.read()


setup(
        name='tileseam',
        version='0.1.0',
        description='Tiled 3D U-Net inference with diagnostics for normalization tiling artifacts.',
        long_description=long_description,
        long_description_content_type='text/markdown',
        license='UNLICENSE',
        classifiers=[
            'Intended Audience :: Science/Research',
            'Topic :: Scientific/Engineering :: Image Recognition',
            'License :: Public Domain',
            'Natural Language :: English',
            'Operating System :: OS Independent',
            'Programming Language :: Python :: 3',
            'Programming Language :: Python :: 3.8',
        ],
        keywords='cli segmentation tiling normalization',
        python_requires='>=3.8',
        install_requires=['numpy', 'docopt', 'termcolor'],
        extras_require={
            'test': ['pytest']
        },
        packages=find_packages(exclude=['tests']),
        entry_points={
                'console_scripts': [
                    'tileseam=tileseam.cli:main',
                ]
            }
)
