"""Context-aware lattice rescoring with recurrent language models."""

from .context import ConcatPolicy, concat_lattices, extract_context_region, rescore_with_context
from .evaluation import cer, oracle_rescore_nbest, run_grid
from .lattice import Arc, Cost, Lattice, best_path, read_lattice_text, write_lattice_text
from .ngram import NgramModel, load_arpa, train_ngram
from .rescore import DifferenceLm, rescore, rescore_exact, rescore_ngram_approx, rescore_pruned
from .vocab import Vocabulary

__version__ = "0.1.0"
