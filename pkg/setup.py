from setuptools import setup

setup(name='riro_harness',
      version='0.1',
      description='Pipeline harness and evaluation metrics for generating test cases from user stories',
      url='',
      author='',
      author_email='',
      license='MIT',
      packages=['riro_harness'],
      package_data={'riro_harness': ['templates/*.txt']},
      python_requires='>=3.10',
      install_requires=['numpy', 'scipy', 'pandas', 'requests', 'tenacity>=8.2'],
      extras_require={'test': ['pytest']},
      entry_points={'console_scripts': ['riro-harness=riro_harness.primary:main']},
      zip_safe=False)
