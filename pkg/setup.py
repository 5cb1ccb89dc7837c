from setuptools import setup, find_packages

setup(
    name='agm_struct',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=[
        "numpy==1.26.4",
        "scipy==1.11.4",
        "protobuf==4.23.4",
        "pydantic==2.5.3"
    ],
    entry_points={
        'console_scripts': [
            'agm-struct=agm_struct.cli:main',
        ],
    },
    license='License :: Free For Educational Use',
    description='Adversarial graphical models for tree-structured prediction with additive loss metrics, '
                'with CRF and structured SVM baselines',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: Free For Educational Use',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    python_requires='>=3.9',
)
