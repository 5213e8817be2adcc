from setuptools import setup, find_packages

setup(
    name='ndsmsr',
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    include_package_data=True,

    version='0.0.1',
    license='MIT',
    description='Super-resolution for aerial and satellite RGB imagery trained with an elevation-map (nDSM) consistency loss instead of a VGG perceptual loss',

    python_requires='>=3.8',
    install_requires=[
        'numpy',
        'opencv-python',
        'pandas',
        'pyyaml',
        'rasterio',
        'scipy',
        'torch',
        'tqdm',
    ],
    entry_points={
        'console_scripts': ['ndsmsr=ndsmsr.__main__:main'],
    },
    classifiers=[
        # complete classifier list: http://pypi.python.org/pypi?%3Aaction=list_classifiers
        'Development Status :: 2 - Pre-Alpha',
        'Environment :: Console',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: Microsoft :: Windows',
        'Operating System :: POSIX',
        'Operating System :: Unix',
        'Programming Language :: Python :: 3 :: Only',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: GIS',
        'Topic :: Scientific/Engineering :: Image Processing',
        'Topic :: Software Development :: Libraries :: Python Modules',
    ],
)

# on package_dir with src structure to support editable installs: https://stackoverflow.com/a/19917117
