import re
from functools import lru_cache
from pathlib import Path

STOPWORDS_RESOURCE = Path(__file__).parent / "resources" / "stopwords-en-v1.txt"
STOPWORDS_VERSION = "en-v1"

# runs of unicode letters and digits; underscore counts as a separator
TOKEN_RE = re.compile(r"[^\W_]+")


@lru_cache(maxsize=None)
def stopwords():
    lines = STOPWORDS_RESOURCE.read_text(encoding="utf8").splitlines()
    return frozenset(
        line.strip() for line in lines if line.strip() and not line.startswith("#")
    )


class Analyzer:
    """Lowercase, split on non-alphanumerics, drop stopwords, optionally stem."""

    def __init__(self, remove_stopwords=True, stem=False):
        self.remove_stopwords = remove_stopwords
        self.stem = stem
        self._stemmer = None
        if stem:
            # only needed when stemming is switched on
            from nltk.stem import PorterStemmer

            self._stemmer = PorterStemmer()

    def __call__(self, text):
        terms = TOKEN_RE.findall(text.lower())
        if self.remove_stopwords:
            stop = stopwords()
            terms = [t for t in terms if t not in stop]
        if self._stemmer is not None:
            terms = [self._stemmer.stem(t) for t in terms]
        return terms

    def settings(self):
        return {
            "remove_stopwords": self.remove_stopwords,
            "stem": self.stem,
            "stopwords": STOPWORDS_VERSION,
        }


tokenize = Analyzer()
