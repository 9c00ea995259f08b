import sys
import pkg_resources
import sphinx_rtd_theme

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon'
]

templates_path = ['_templates']

master_doc = 'index'

project = 'newsfuse'
copyright = '2024, newsfuse contributors'
author = 'newsfuse contributors'

try:
    release = pkg_resources.get_distribution('newsfuse').version
except pkg_resources.DistributionNotFound:
    print('To build the documentation, the distribution information of')
    print('newsfuse has to be available.  Either install the package into')
    print('your development environment or run "pip install -e ." to set up')
    print('the metadata.  A virtualenv is recommended!')
    sys.exit(1)
del pkg_resources
version = '.'.join(release.split('.')[:2])

language = 'en'
exclude_patterns = ['_build']

pygments_style = 'sphinx'
html_use_smartypants = False
html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_context = {
    "show_sphinx": False
}

autodoc_member_order = 'bysource'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3.8', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'pandas': ('https://pandas.pydata.org/docs', None),
}
