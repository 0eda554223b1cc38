"""Quality-based syntactic template retrieval for controlled paraphrasing."""

from .errors import DataError, InvariantError, SyntempoError
from .library import TemplateEntry, TemplateLibrary, build_from_corpus
from .syntree import LinearTemplate, SyntaxTree, linearize, parse_bracket, to_bracket, truncate
from .ted import normalized_ted, ted

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "InvariantError",
    "LinearTemplate",
    "SyntaxTree",
    "SyntempoError",
    "TemplateEntry",
    "TemplateLibrary",
    "build_from_corpus",
    "linearize",
    "normalized_ted",
    "parse_bracket",
    "ted",
    "to_bracket",
    "truncate",
]
